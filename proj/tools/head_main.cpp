#include <iostream>

#include "head/cli.hpp"

int main(int argc, char** argv) { return head::dispatch(argc, argv, std::cout, std::cerr); }

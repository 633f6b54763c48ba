#pragma once

#include <iosfwd>

namespace head {

// Entry point of the `head` tool. Returns 0 on success, 1 on validation or
// usage errors, 2 on runtime errors.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace head

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "head/grid.hpp"

namespace head {

// Binary tensor file:
//   "HEAD" | version u32 | dtype u8 (0 = float32) | rank u32 | dims u32 x rank | payload
// All integers and floats little-endian, payload row-major.
inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_grid(const std::filesystem::path& path, const Grid& grid);
Grid load_grid(const std::filesystem::path& path);

}  // namespace head

#include "head/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "head/errors.hpp"

namespace head {

namespace {

constexpr std::array<char, 4> kMagic{'H', 'E', 'A', 'D'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw IoError("truncated tensor header");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  std::size_t count = 1;
  for (auto d : tensor.dims) count *= d;
  if (count != tensor.data.size()) throw DimensionMismatch("tensor dims do not match payload");

  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kTensorFormatVersion);
  out.put(static_cast<char>(kDtypeFloat32));
  put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_u32(out, d);
  for (float f : tensor.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  if (!out) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw IoError("bad tensor magic");
  const auto version = get_u32(in);
  if (version != kTensorFormatVersion)
    throw IoError("unsupported tensor format version " + std::to_string(version));
  const int dtype = in.get();
  if (dtype != kDtypeFloat32) throw IoError("unsupported tensor dtype " + std::to_string(dtype));
  Tensor tensor;
  const auto rank = get_u32(in);
  if (rank > 8) throw IoError("implausible tensor rank");
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    tensor.dims.push_back(get_u32(in));
    count *= tensor.dims.back();
  }
  tensor.data.resize(count);
  for (auto& f : tensor.data) f = std::bit_cast<float>(get_u32(in));
  return tensor;
}

void save_grid(const std::filesystem::path& path, const Grid& grid) {
  Tensor tensor;
  tensor.dims = {static_cast<std::uint32_t>(grid.height()), static_cast<std::uint32_t>(grid.width())};
  tensor.data.reserve(grid.size());
  for (double v : grid.values()) tensor.data.push_back(static_cast<float>(v));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_tensor(out, tensor);
}

Grid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  const Tensor tensor = read_tensor(in);
  if (tensor.dims.size() != 2) throw IoError(path.string() + ": expected a rank-2 tensor");
  Grid grid(static_cast<int>(tensor.dims[0]), static_cast<int>(tensor.dims[1]));
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = tensor.data[i];
  return grid;
}

}  // namespace head

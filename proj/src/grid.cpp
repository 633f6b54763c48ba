#include "head/grid.hpp"

#include <algorithm>
#include <numeric>

#include "head/errors.hpp"

namespace head {

Grid::Grid(int height, int width, double fill)
    : height_(height), width_(width),
      values_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {
  if (height <= 0 || width <= 0) throw InvalidArgument("grid dimensions must be positive");
}

double Grid::max() const { return *std::max_element(values_.begin(), values_.end()); }

double Grid::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

double Grid::mean() const { return sum() / static_cast<double>(values_.size()); }

double Grid::dot(const Grid& other) const {
  if (!same_shape(other)) throw DimensionMismatch("grid shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

Grid Grid::to_float_precision() const {
  Grid out = *this;
  for (double& v : out.values_) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace head

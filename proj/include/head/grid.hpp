#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace head {

// Row-major H x W field of doubles. Used for latents, images, templates and
// attention maps alike.
class Grid {
public:
  Grid() = default;
  Grid(int height, int width, double fill = 0.0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(int row, int col) noexcept { return values_[index(row, col)]; }
  double operator()(int row, int col) const noexcept { return values_[index(row, col)]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool same_shape(const Grid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  double max() const;
  double sum() const;
  double mean() const;
  double dot(const Grid& other) const;
  double squared_norm() const { return dot(*this); }

  // Rounds every entry through single precision (the storage dtype).
  Grid to_float_precision() const;

  bool operator==(const Grid& other) const = default;

private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

}  // namespace head

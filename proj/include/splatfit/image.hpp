#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace splatfit {

// Dense row-major image with C interleaved channels of doubles.
// Pixel (x, y) has x in [0, width), y in [0, height); row 0 is the top row.
template <int C>
class Image {
  static_assert(C >= 1);

 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height * C, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  static constexpr int channels() { return C; }
  bool empty() const { return data_.empty(); }
  size_t pixel_count() const { return static_cast<size_t>(width_) * height_; }

  double& at(int x, int y, int c = 0) {
    assert(in_bounds(x, y) && c >= 0 && c < C);
    return data_[(static_cast<size_t>(y) * width_ + x) * C + c];
  }
  double at(int x, int y, int c = 0) const {
    assert(in_bounds(x, y) && c >= 0 && c < C);
    return data_[(static_cast<size_t>(y) * width_ + x) * C + c];
  }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_;
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

using Image1 = Image<1>;
using Image3 = Image<3>;

}  // namespace splatfit

#pragma once

#include <vector>

#include "splatfit/image.hpp"
#include "splatfit/types.hpp"

namespace splatfit {

inline constexpr int kFeatureChannels = 8;

using FeatureImage = Image<kFeatureChannels>;

// Hand-crafted per-pixel descriptors: gray, three opponent color channels,
// Sobel gradients of gray, gradient magnitude, and 5x5 local standard
// deviation; every channel is normalized by its own 5x5 local mean/std.
FeatureImage build_feature_image(const Image3& rgb);

struct FeatureLevel {
  int scale = 1;  // full-resolution pixels per pixel of this level
  FeatureImage features;
};

// Levels are built by repeatedly box-downsampling the RGB image by 2 (floor
// dimensions) and re-extracting features at each scale. `scales` must be
// positive powers of two in increasing order starting at 1.
struct FeaturePyramid {
  int base_width = 0, base_height = 0;
  std::vector<FeatureLevel> levels;
};

FeaturePyramid build_feature_pyramid(const Image3& rgb, const std::vector<int>& scales);

struct FeatureSample {
  double f[kFeatureChannels];
  double dfdx[kFeatureChannels];  // gradient w.r.t. full-resolution pixel x
  double dfdy[kFeatureChannels];
  bool in_frame;  // p inside [0, W) x [0, H) at full resolution
};

// Bilinear feature lookup at full-resolution pixel position p from the level
// with the given scale. Out-of-frame positions clamp to the border and are
// flagged; the caller decides whether to use them.
FeatureSample sample_feature(const FeaturePyramid& pyr, int scale, const Vec2& p);

// 2x box downsample with floor dimensions (used between pyramid levels).
Image3 box_downsample2(const Image3& img);

}  // namespace splatfit

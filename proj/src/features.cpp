#include "splatfit/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "splatfit/errors.hpp"

namespace splatfit {

namespace {

constexpr double kNormEps = 1e-6;

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// 5x5 box mean and standard deviation with edge-clamped windows.
void box_stats5(const Image1& img, Image1& mean, Image1& stdev) {
  const int w = img.width(), h = img.height();
  mean = Image1(w, h);
  stdev = Image1(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0, s2 = 0;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const double v = img.at(clampi(x + dx, 0, w - 1), clampi(y + dy, 0, h - 1));
          s += v;
          s2 += v * v;
        }
      }
      const double m = s / 25.0;
      mean.at(x, y) = m;
      stdev.at(x, y) = std::sqrt(std::max(s2 / 25.0 - m * m, 0.0));
    }
  }
}

}  // namespace

FeatureImage build_feature_image(const Image3& rgb) {
  const int w = rgb.width(), h = rgb.height();
  if (w < 1 || h < 1) throw InvalidSpecError("feature extraction needs a non-empty image");

  Image1 gray(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      gray.at(x, y) = (rgb.at(x, y, 0) + rgb.at(x, y, 1) + rgb.at(x, y, 2)) / 3.0;

  // raw channels before local normalization
  std::array<Image1, kFeatureChannels> raw;
  for (auto& c : raw) c = Image1(w, h);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = gray.at(x, y);
      raw[0].at(x, y) = g;
      raw[1].at(x, y) = rgb.at(x, y, 0) - g;
      raw[2].at(x, y) = rgb.at(x, y, 1) - g;
      raw[3].at(x, y) = rgb.at(x, y, 2) - g;

      const auto px = [&](int dx, int dy) {
        return gray.at(clampi(x + dx, 0, w - 1), clampi(y + dy, 0, h - 1));
      };
      const double gx = (px(1, -1) + 2 * px(1, 0) + px(1, 1) -
                         px(-1, -1) - 2 * px(-1, 0) - px(-1, 1)) / 8.0;
      const double gy = (px(-1, 1) + 2 * px(0, 1) + px(1, 1) -
                         px(-1, -1) - 2 * px(0, -1) - px(1, -1)) / 8.0;
      raw[4].at(x, y) = gx;
      raw[5].at(x, y) = gy;
      raw[6].at(x, y) = std::hypot(gx, gy);
    }
  }

  Image1 mean, stdev;
  box_stats5(gray, mean, stdev);
  raw[7] = stdev;

  FeatureImage out(w, h);
  for (int c = 0; c < kFeatureChannels; ++c) {
    box_stats5(raw[c], mean, stdev);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.at(x, y, c) =
            (raw[c].at(x, y) - mean.at(x, y)) / (stdev.at(x, y) + kNormEps);
      }
    }
  }
  return out;
}

Image3 box_downsample2(const Image3& img) {
  const int w = img.width() / 2, h = img.height() / 2;
  if (w < 1 || h < 1) throw InvalidSpecError("image too small to downsample");
  Image3 out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = 0.25 * (img.at(2 * x, 2 * y, c) + img.at(2 * x + 1, 2 * y, c) +
                                  img.at(2 * x, 2 * y + 1, c) + img.at(2 * x + 1, 2 * y + 1, c));
      }
    }
  }
  return out;
}

FeaturePyramid build_feature_pyramid(const Image3& rgb, const std::vector<int>& scales) {
  if (scales.empty() || scales.front() != 1) {
    throw InvalidSpecError("pyramid scales must start at 1");
  }
  for (size_t i = 0; i < scales.size(); ++i) {
    const int s = scales[i];
    if (s <= 0 || (s & (s - 1)) != 0 || (i > 0 && s <= scales[i - 1])) {
      throw InvalidSpecError("pyramid scales must be increasing powers of two");
    }
  }

  FeaturePyramid pyr;
  pyr.base_width = rgb.width();
  pyr.base_height = rgb.height();

  Image3 current = rgb;
  int current_scale = 1;
  for (int s : scales) {
    while (current_scale < s) {
      current = box_downsample2(current);
      current_scale *= 2;
    }
    pyr.levels.push_back({s, build_feature_image(current)});
  }
  return pyr;
}

FeatureSample sample_feature(const FeaturePyramid& pyr, int scale, const Vec2& p) {
  const FeatureLevel* level = nullptr;
  for (const auto& l : pyr.levels) {
    if (l.scale == scale) {
      level = &l;
      break;
    }
  }
  if (!level) throw InvalidSpecError("requested pyramid scale was not built");

  FeatureSample out;
  out.in_frame = p.x() >= 0.0 && p.x() < pyr.base_width &&
                 p.y() >= 0.0 && p.y() < pyr.base_height;

  const FeatureImage& img = level->features;
  const int w = img.width(), h = img.height();
  const double fx = p.x() / scale - 0.5;
  const double fy = p.y() / scale - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double tx = fx - x0, ty = fy - y0;
  const int cx0 = clampi(x0, 0, w - 1), cx1 = clampi(x0 + 1, 0, w - 1);
  const int cy0 = clampi(y0, 0, h - 1), cy1 = clampi(y0 + 1, 0, h - 1);

  for (int c = 0; c < kFeatureChannels; ++c) {
    const double f00 = img.at(cx0, cy0, c), f10 = img.at(cx1, cy0, c);
    const double f01 = img.at(cx0, cy1, c), f11 = img.at(cx1, cy1, c);
    const double top = f00 + tx * (f10 - f00);
    const double bot = f01 + tx * (f11 - f01);
    out.f[c] = top + ty * (bot - top);
    // clamped duplicate taps make the border gradient vanish, matching the
    // constant extension of the forward value
    out.dfdx[c] = ((1 - ty) * (f10 - f00) + ty * (f11 - f01)) / scale;
    out.dfdy[c] = (bot - top) / scale;
  }
  return out;
}

}  // namespace splatfit

#include <array>
#include <cmath>

#include "splatfit/errors.hpp"
#include "splatfit/losses.hpp"

namespace splatfit {

namespace {

constexpr int kRadius = 5;                // 11x11 window
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;       // (K1 * range)^2
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, 2 * kRadius + 1>& window1d() {
  static const auto w = [] {
    std::array<double, 2 * kRadius + 1> arr{};
    for (int k = -kRadius; k <= kRadius; ++k) {
      arr[k + kRadius] = std::exp(-0.5 * k * k / (kSigma * kSigma));
    }
    return arr;
  }();
  return w;
}

struct SsimMoments {
  double mx, my, sxx, syy, sxy;
};

// Windowed raw moments around (x, y) for channel c, border-renormalized.
SsimMoments moments_at(const Image3& a, const Image3& b, int x, int y, int c) {
  const auto& w1 = window1d();
  const int w = a.width(), h = a.height();
  double z = 0, mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
  for (int dy = -kRadius; dy <= kRadius; ++dy) {
    const int yy = y + dy;
    if (yy < 0 || yy >= h) continue;
    for (int dx = -kRadius; dx <= kRadius; ++dx) {
      const int xx = x + dx;
      if (xx < 0 || xx >= w) continue;
      const double wt = w1[dx + kRadius] * w1[dy + kRadius];
      const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
      z += wt;
      mx += wt * va;
      my += wt * vb;
      sxx += wt * va * va;
      syy += wt * vb * vb;
      sxy += wt * va * vb;
    }
  }
  return {mx / z, my / z, sxx / z, syy / z, sxy / z};
}

double window_norm(int x, int y, int w, int h) {
  const auto& w1 = window1d();
  double zx = 0, zy = 0;
  for (int d = -kRadius; d <= kRadius; ++d) {
    if (x + d >= 0 && x + d < w) zx += w1[d + kRadius];
    if (y + d >= 0 && y + d < h) zy += w1[d + kRadius];
  }
  return zx * zy;
}

struct SsimPoint {
  double s;                    // SSIM value
  double d_mx, d_sxx, d_sxy;   // partials w.r.t. the first image's moments
};

SsimPoint ssim_point(const SsimMoments& m) {
  const double vx = m.sxx - m.mx * m.mx;
  const double vy = m.syy - m.my * m.my;
  const double cov = m.sxy - m.mx * m.my;
  const double a1 = 2 * m.mx * m.my + kC1;
  const double a2 = 2 * cov + kC2;
  const double b1 = m.mx * m.mx + m.my * m.my + kC1;
  const double b2 = vx + vy + kC2;
  const double s = (a1 * a2) / (b1 * b2);

  SsimPoint out;
  out.s = s;
  out.d_mx = (2 * m.my * a2 - 2 * m.my * a1) / (b1 * b2) -
             s * (2 * m.mx / b1 - 2 * m.mx / b2);
  out.d_sxx = -s / b2;
  out.d_sxy = 2 * a1 / (b1 * b2);
  return out;
}

}  // namespace

double ssim_mean(const Image3& a, const Image3& b) {
  if (!a.same_shape(b)) {
    throw DimensionMismatchError("ssim inputs differ in size");
  }
  const int w = a.width(), h = a.height();
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        total += ssim_point(moments_at(a, b, x, y, c)).s;
      }
    }
  }
  return total / (3.0 * w * h);
}

ColorLossResult color_loss(const Image3& rendered, const Image3& target,
                           double ssim_mix, GateHash* gate) {
  if (!rendered.same_shape(target)) {
    throw DimensionMismatchError("color loss inputs differ in size");
  }
  const int w = rendered.width(), h = rendered.height();
  const double npix = 3.0 * w * h;
  const auto& w1 = window1d();

  ColorLossResult out;
  out.d_rendered = Image3(w, h, 0.0);

  // L1 term
  double mae = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double diff = rendered.at(x, y, c) - target.at(x, y, c);
        mae += std::abs(diff);
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        out.d_rendered.at(x, y, c) = (1.0 - ssim_mix) * sign / npix;
        if (gate) gate->fold(static_cast<uint64_t>(sign + 2));
      }
    }
  }
  mae /= npix;

  // SSIM term with its backward pass. dL/dx(q) needs the adjoint fields of
  // the moment maps correlated with the raw window, so the fields are stored
  // divided by their per-pixel normalization first.
  double ssim_total = 0;
  Image3 f_m(w, h), f_xx(w, h), f_xy(w, h);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const SsimPoint pt = ssim_point(moments_at(rendered, target, x, y, c));
        ssim_total += pt.s;
        const double z = window_norm(x, y, w, h);
        f_m.at(x, y, c) = pt.d_mx / z;
        f_xx.at(x, y, c) = pt.d_sxx / z;
        f_xy.at(x, y, c) = pt.d_sxy / z;
      }
    }
  }
  const double ssim = ssim_total / npix;

  // d(1 - mean SSIM)/dx = -(1/N) [corr(F_m) + 2 x corr(F_xx) + y corr(F_xy)]
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double cm = 0, cxx = 0, cxy = 0;
        for (int dy = -kRadius; dy <= kRadius; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= w) continue;
            const double wt = w1[dx + kRadius] * w1[dy + kRadius];
            cm += wt * f_m.at(xx, yy, c);
            cxx += wt * f_xx.at(xx, yy, c);
            cxy += wt * f_xy.at(xx, yy, c);
          }
        }
        out.d_rendered.at(x, y, c) -=
            ssim_mix / npix *
            (cm + 2 * rendered.at(x, y, c) * cxx + target.at(x, y, c) * cxy);
      }
    }
  }

  out.mae = mae;
  out.ssim = ssim;
  out.loss = (1.0 - ssim_mix) * mae + ssim_mix * (1.0 - ssim);
  return out;
}

}  // namespace splatfit

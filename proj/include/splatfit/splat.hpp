#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "splatfit/geometry.hpp"
#include "splatfit/types.hpp"

namespace splatfit {

// Planar Gaussian surfel. The quaternion rot = {w, x, y, z} is normalized
// before use; its rotation columns are the tangent axes t1, t2 and the
// normal n = t1 x t2. Scales and opacity live in unconstrained form.
struct Splat {
  Vec3 center = Vec3::Zero();
  double rot[4] = {1, 0, 0, 0};
  double log_scales[2] = {0, 0};
  double opacity_logit = 0;
  Vec3 color = Vec3::Zero();
};

using SplatSet = std::vector<Splat>;

// Flat parameter indexing used by the optimizer and the gradient checker:
// 0..2 center, 3..6 rotation quaternion, 7..8 log scales, 9 opacity logit,
// 10..12 color.
inline constexpr int kSplatParamCount = 13;

double splat_param(const Splat& s, int index);
void set_splat_param(Splat& s, int index, double value);
const char* splat_param_name(int index);

// Per-splat gradient with the same indexing as splat_param.
struct SplatGrad {
  double v[kSplatParamCount] = {};
  double& operator[](int i) { return v[i]; }
  double operator[](int i) const { return v[i]; }
  SplatGrad& operator+=(const SplatGrad& o) {
    for (int i = 0; i < kSplatParamCount; ++i) v[i] += o.v[i];
    return *this;
  }
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// Rotation matrix of the normalized quaternion; columns are (t1, t2, n).
Mat3 quat_to_rotation(const double q[4]);
void quat_from_rotation(const Mat3& r, double q[4]);

// Given G(i, j) = dL/dR(i, j) for R = R(q / |q|), returns dL/dq for the raw
// (not necessarily unit) quaternion, including the normalization Jacobian.
Vec4 rotation_gradient_to_quat(const double q[4], const Mat3& G);

// Splat with derived quantities baked out for rendering.
struct PreparedSplat {
  Vec3 center;
  Vec3 t1, t2, n;
  double s1, s2;      // exp(log_scales)
  double opacity;     // sigmoid(opacity_logit)
  Vec3 color;
};

PreparedSplat prepare_splat(const Splat& s);

struct SplatHit {
  double u, v;     // plane coordinates in units of the splat scales
  double depth;    // Euclidean ray parameter
  double gvalue;   // exp(-(u^2 + v^2) / 2), zero outside the 3-sigma disk
};

// Ray/surfel intersection. Misses when the ray grazes the plane
// (|dir . n| < 1e-9), the hit is closer than the near clip (depth <= 1e-4),
// or the point falls outside the 3-sigma footprint (u^2 + v^2 > 9).
std::optional<SplatHit> intersect_ray_splat(const Ray& ray, const PreparedSplat& s);
std::optional<SplatHit> intersect_ray_splat(const Ray& ray, const Splat& s);

// Backward pass of intersect_ray_splat. (gu, gv, gd) are adjoints of
// (u, v, depth) and gn is the adjoint of the splat normal. Accumulates into
// the center gradient, the frame gradient G (columns match t1, t2, n), and
// the log-scale gradients.
void intersect_backward(const Ray& ray, const PreparedSplat& s,
                        const SplatHit& hit,
                        double gu, double gv, double gd, const Vec3& gn,
                        Vec3& d_center, Mat3& d_frame, double d_log_scales[2]);

// Throws InvalidSpecError on non-finite parameters or a near-zero quaternion.
void validate_splats(const SplatSet& splats);

}  // namespace splatfit

#include "splatfit/splat.hpp"

#include <cmath>
#include <string>

#include "splatfit/errors.hpp"

namespace splatfit {

double splat_param(const Splat& s, int index) {
  switch (index) {
    case 0: case 1: case 2: return s.center[index];
    case 3: case 4: case 5: case 6: return s.rot[index - 3];
    case 7: case 8: return s.log_scales[index - 7];
    case 9: return s.opacity_logit;
    case 10: case 11: case 12: return s.color[index - 10];
    default: throw InvalidSpecError("splat parameter index out of range");
  }
}

void set_splat_param(Splat& s, int index, double value) {
  switch (index) {
    case 0: case 1: case 2: s.center[index] = value; return;
    case 3: case 4: case 5: case 6: s.rot[index - 3] = value; return;
    case 7: case 8: s.log_scales[index - 7] = value; return;
    case 9: s.opacity_logit = value; return;
    case 10: case 11: case 12: s.color[index - 10] = value; return;
    default: throw InvalidSpecError("splat parameter index out of range");
  }
}

const char* splat_param_name(int index) {
  static const char* names[kSplatParamCount] = {
      "center.x", "center.y", "center.z",
      "rot.w", "rot.x", "rot.y", "rot.z",
      "log_scale.1", "log_scale.2",
      "opacity_logit",
      "color.r", "color.g", "color.b"};
  if (index < 0 || index >= kSplatParamCount) {
    throw InvalidSpecError("splat parameter index out of range");
  }
  return names[index];
}

Mat3 quat_to_rotation(const double q[4]) {
  const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (!(norm > 1e-12)) {
    throw InvalidSpecError("rotation quaternion has near-zero norm");
  }
  const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

void quat_from_rotation(const Mat3& r, double q[4]) {
  const double trace = r.trace();
  if (trace > 0) {
    double s = std::sqrt(trace + 1.0) * 2;
    q[0] = 0.25 * s;
    q[1] = (r(2, 1) - r(1, 2)) / s;
    q[2] = (r(0, 2) - r(2, 0)) / s;
    q[3] = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
    q[0] = (r(2, 1) - r(1, 2)) / s;
    q[1] = 0.25 * s;
    q[2] = (r(0, 1) + r(1, 0)) / s;
    q[3] = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
    q[0] = (r(0, 2) - r(2, 0)) / s;
    q[1] = (r(0, 1) + r(1, 0)) / s;
    q[2] = 0.25 * s;
    q[3] = (r(1, 2) + r(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
    q[0] = (r(1, 0) - r(0, 1)) / s;
    q[1] = (r(0, 2) + r(2, 0)) / s;
    q[2] = (r(1, 2) + r(2, 1)) / s;
    q[3] = 0.25 * s;
  }
}

Vec4 rotation_gradient_to_quat(const double q[4], const Mat3& G) {
  const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;

  Mat3 dw, dx, dy, dz;
  dw << 0, -z, y,
        z, 0, -x,
        -y, x, 0;
  dx << 0, y, z,
        y, -2 * x, -w,
        z, w, -2 * x;
  dy << -2 * y, x, w,
        x, 0, z,
        -w, z, -2 * y;
  dz << -2 * z, -w, x,
        w, -2 * z, y,
        x, y, 0;

  Vec4 g_unit(2 * G.cwiseProduct(dw).sum(), 2 * G.cwiseProduct(dx).sum(),
              2 * G.cwiseProduct(dy).sum(), 2 * G.cwiseProduct(dz).sum());

  // Chain through q_hat = q / |q|: J = (I - q_hat q_hat^T) / |q|.
  const Vec4 q_hat(w, x, y, z);
  return (g_unit - q_hat * q_hat.dot(g_unit)) / norm;
}

PreparedSplat prepare_splat(const Splat& s) {
  const Mat3 r = quat_to_rotation(s.rot);
  PreparedSplat p;
  p.center = s.center;
  p.t1 = r.col(0);
  p.t2 = r.col(1);
  p.n = r.col(2);
  p.s1 = std::exp(s.log_scales[0]);
  p.s2 = std::exp(s.log_scales[1]);
  p.opacity = sigmoid(s.opacity_logit);
  p.color = s.color;
  return p;
}

namespace {
constexpr double kGrazingEps = 1e-9;
constexpr double kNearClip = 1e-4;
constexpr double kCutoffR2 = 9.0;
}

std::optional<SplatHit> intersect_ray_splat(const Ray& ray, const PreparedSplat& s) {
  const double denom = ray.dir.dot(s.n);
  if (std::abs(denom) < kGrazingEps) return std::nullopt;
  const double depth = (s.center - ray.origin).dot(s.n) / denom;
  if (depth <= kNearClip) return std::nullopt;
  const Vec3 diff = ray.origin + depth * ray.dir - s.center;
  const double u = diff.dot(s.t1) / s.s1;
  const double v = diff.dot(s.t2) / s.s2;
  const double r2 = u * u + v * v;
  if (r2 > kCutoffR2) return std::nullopt;
  return SplatHit{u, v, depth, std::exp(-0.5 * r2)};
}

std::optional<SplatHit> intersect_ray_splat(const Ray& ray, const Splat& s) {
  return intersect_ray_splat(ray, prepare_splat(s));
}

void intersect_backward(const Ray& ray, const PreparedSplat& s,
                        const SplatHit& hit,
                        double gu, double gv, double gd, const Vec3& gn,
                        Vec3& d_center, Mat3& d_frame, double d_log_scales[2]) {
  const double denom = ray.dir.dot(s.n);
  const Vec3 diff = ray.origin + hit.depth * ray.dir - s.center;

  const double au = gu / s.s1;
  const double av = gv / s.s2;

  d_frame.col(0) += au * diff;
  d_frame.col(1) += av * diff;
  d_log_scales[0] += -gu * hit.u;
  d_log_scales[1] += -gv * hit.v;

  const Vec3 g_diff = au * s.t1 + av * s.t2;
  const double g_depth = gd + g_diff.dot(ray.dir);

  d_center += -g_diff + (g_depth / denom) * s.n;
  d_frame.col(2) += gn - (g_depth / denom) * diff;
}

void validate_splats(const SplatSet& splats) {
  for (size_t i = 0; i < splats.size(); ++i) {
    const Splat& s = splats[i];
    bool finite = s.center.allFinite() && s.color.allFinite() &&
                  std::isfinite(s.opacity_logit) &&
                  std::isfinite(s.log_scales[0]) && std::isfinite(s.log_scales[1]);
    double qn2 = 0;
    for (double c : s.rot) {
      finite = finite && std::isfinite(c);
      qn2 += c * c;
    }
    if (!finite) {
      throw InvalidSpecError("splat " + std::to_string(i) + " has non-finite parameters");
    }
    if (!(qn2 > 1e-24)) {
      throw InvalidSpecError("splat " + std::to_string(i) + " has a zero quaternion");
    }
  }
}

}  // namespace splatfit

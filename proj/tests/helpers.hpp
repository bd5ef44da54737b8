#pragma once

#include <random>

#include "splatfit/geometry.hpp"
#include "splatfit/rng.hpp"
#include "splatfit/splat.hpp"

namespace splatfit::testutil {

inline Camera orbit_camera(double azimuth_rad, double elevation_rad,
                           double radius, int size = 32, double focal = 40.0) {
  const Vec3 origin(radius * std::cos(azimuth_rad) * std::cos(elevation_rad),
                    radius * std::sin(azimuth_rad) * std::cos(elevation_rad),
                    radius * std::sin(elevation_rad));
  return camera_look_at(origin, Vec3::Zero(), Vec3(0, 0, 1), focal, focal,
                        size / 2.0, size / 2.0, size, size);
}

// Splats scattered in a ball around the origin with moderate opacities
// (kept below saturation so compositing gates stay stable under small
// parameter perturbations).
inline SplatSet random_splat_cloud(Rng& rng, int count, double extent = 0.6,
                                   double max_logit = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SplatSet set(count);
  for (Splat& s : set) {
    s.center = Vec3(u(rng), u(rng), u(rng)) * extent;
    for (double& c : s.rot) c = u(rng);
    if (std::abs(s.rot[0]) + std::abs(s.rot[1]) + std::abs(s.rot[2]) +
            std::abs(s.rot[3]) < 1e-3) {
      s.rot[0] = 1.0;
    }
    s.log_scales[0] = -1.8 + 0.6 * u(rng);
    s.log_scales[1] = -1.8 + 0.6 * u(rng);
    s.opacity_logit = max_logit * u(rng);
    s.color = Vec3(0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng));
  }
  return set;
}

}  // namespace splatfit::testutil

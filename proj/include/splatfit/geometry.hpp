#pragma once

#include <optional>

#include "splatfit/types.hpp"

namespace splatfit {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit length
};

// Pinhole camera. Convention: camera +z looks forward, +x right, +y down;
// pixel (ix, iy) spans the unit square [ix, ix+1) x [iy, iy+1) and its ray
// passes through the continuous position (ix + 0.5, iy + 0.5).
// All depths exchanged with the renderer are Euclidean distances along unit
// rays; camera-frame z appears only in projection results.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 rotation = Mat3::Identity();  // camera-to-world
  Vec3 translation = Vec3::Zero();   // camera origin in world coordinates

  // Throws InvalidSpecError on non-positive intrinsics/sizes or a
  // non-orthonormal rotation (tolerance 1e-6).
  void validate() const;

  Mat3 world_to_cam_rotation() const { return rotation.transpose(); }
  Vec3 world_to_cam_translation() const { return -rotation.transpose() * translation; }
};

struct Projection {
  Vec2 pixel;  // continuous pixel coordinates
  double z;    // camera-frame depth
};

// Builds a camera at `origin` looking at `target`. `up` fixes the roll;
// it must not be parallel to the view direction.
Camera camera_look_at(const Vec3& origin, const Vec3& target, const Vec3& up,
                      double fx, double fy, double cx, double cy,
                      int width, int height);

// Ray through the continuous pixel position p (callers pass ix + 0.5 for
// pixel centers). The direction is unit length in world coordinates.
Ray ray_through_pixel(const Camera& cam, const Vec2& p);

// Projects a world point. Returns nullopt when the camera-frame depth is
// below 1e-9 (point at or behind the camera plane).
std::optional<Projection> try_project(const Camera& cam, const Vec3& x);

// Throwing variant of try_project (InvalidSpecError on behind-camera input).
Projection project_point(const Camera& cam, const Vec3& x);

// Point at Euclidean distance `depth` along the ray through pixel position p.
Vec3 unproject_pixel(const Camera& cam, const Vec2& p, double depth);

}  // namespace splatfit

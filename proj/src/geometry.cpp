#include "splatfit/geometry.hpp"

#include <cmath>

#include "splatfit/errors.hpp"

namespace splatfit {

namespace {
constexpr double kMinProjectionZ = 1e-9;
}

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) {
    throw InvalidSpecError("camera focal lengths must be positive");
  }
  if (width < 1 || height < 1) {
    throw InvalidSpecError("camera image size must be at least 1x1");
  }
  if (!rotation.allFinite() || !translation.allFinite() ||
      !std::isfinite(cx) || !std::isfinite(cy)) {
    throw InvalidSpecError("camera parameters must be finite");
  }
  const double ortho_err = (rotation.transpose() * rotation - Mat3::Identity())
                               .cwiseAbs()
                               .maxCoeff();
  if (ortho_err > 1e-6 || rotation.determinant() < 0) {
    throw InvalidSpecError("camera rotation must be a proper orthonormal matrix");
  }
}

Camera camera_look_at(const Vec3& origin, const Vec3& target, const Vec3& up,
                      double fx, double fy, double cx, double cy,
                      int width, int height) {
  const Vec3 forward = (target - origin).normalized();
  Vec3 right = forward.cross(up);
  const double rn = right.norm();
  if (rn < 1e-9) {
    throw InvalidSpecError("look-at direction is parallel to the up vector");
  }
  right /= rn;
  const Vec3 down = forward.cross(right);

  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  cam.rotation.col(0) = right;
  cam.rotation.col(1) = down;
  cam.rotation.col(2) = forward;
  cam.translation = origin;
  cam.validate();
  return cam;
}

Ray ray_through_pixel(const Camera& cam, const Vec2& p) {
  const Vec3 dir_cam((p.x() - cam.cx) / cam.fx, (p.y() - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = cam.translation;
  ray.dir = (cam.rotation * dir_cam).normalized();
  return ray;
}

std::optional<Projection> try_project(const Camera& cam, const Vec3& x) {
  const Vec3 xc = cam.rotation.transpose() * (x - cam.translation);
  if (xc.z() < kMinProjectionZ) return std::nullopt;
  return Projection{Vec2(cam.fx * xc.x() / xc.z() + cam.cx,
                         cam.fy * xc.y() / xc.z() + cam.cy),
                    xc.z()};
}

Projection project_point(const Camera& cam, const Vec3& x) {
  auto proj = try_project(cam, x);
  if (!proj) {
    throw InvalidSpecError("cannot project a point at or behind the camera plane");
  }
  return *proj;
}

Vec3 unproject_pixel(const Camera& cam, const Vec2& p, double depth) {
  const Ray ray = ray_through_pixel(cam, p);
  return ray.origin + depth * ray.dir;
}

}  // namespace splatfit

#pragma once
// Procedural test scenes: implicit-surface geometry with deterministic
// shading, ground-truth depth/point sampling, a monocular-depth stand-in
// that preserves ordering but not scale, and noisy surfel initialization.

#include <json.hpp>

#include "splatfit/io.hpp"
#include "splatfit/splat.hpp"

namespace splatfit {

struct SpherePrimitive {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
};

struct BoxPrimitive {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3(0.3, 0.3, 0.3);
};

struct TextureSpec {
  std::string kind = "checker";  // "checker" | "marble"
  double scale = 0.25;           // checker period / marble vein frequency unit
  Vec3 color_a = Vec3(0.85, 0.35, 0.25);
  Vec3 color_b = Vec3(0.2, 0.45, 0.8);
};

struct RigSpec {
  int count = 3;
  double radius = 2.0;
  double elevation = 0.35;  // radians above the horizontal plane
  double focal = 70.0;      // pixels
  Vec3 target = Vec3::Zero();
  // explicit per-view azimuths in degrees; empty → uniform 360/count spacing
  std::vector<double> azimuths_deg;
};

struct MonoWarp {
  double gamma = 1.3;
  double a = 1.0;
  double b = 0.05;
  double sigma_n = 0.005;
};

struct SceneSpec {
  std::vector<SpherePrimitive> spheres;
  std::vector<BoxPrimitive> boxes;
  double blend_k = 0.1;  // smooth-union blend width; <= 0 gives a hard union
  TextureSpec texture;
  RigSpec rig;
  int image_size = 64;
  MonoWarp mono;
  size_t gt_point_count = 100000;
  uint64_t seed = 0;
};

// Throws InvalidSpecError: needs >= 2 views, >= 1 primitive, every primitive
// inside the unit sphere, positive warp parameters.
void validate_scene_spec(const SceneSpec& spec);

SceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::json scene_spec_to_json(const SceneSpec& spec);

// Six-view orbit rig over a blended sphere+box; views 0..2 form the sparse
// training triplet, views 3..5 sit between them for held-out evaluation.
SceneSpec reference_scene_spec();

double scene_sdf(const SceneSpec& spec, const Vec3& p);
Vec3 scene_sdf_gradient(const SceneSpec& spec, const Vec3& p);  // central differences
Vec3 texture_color(const TextureSpec& tex, const Vec3& p);

Camera rig_camera(const SceneSpec& spec, int view_index);

struct TraceResult {
  bool hit = false;
  double t = 0.0;  // ray parameter of the surface point
};
TraceResult trace_ray(const SceneSpec& spec, const Ray& ray);

// Full bundle: per-view RGB/depth/mono plus a surface point cloud with
// normals. Deterministic given (spec, spec.seed).
SceneBundle generate_scene(const SceneSpec& spec);

// D~ = a * depth^gamma + b + N(0, sigma_n); uncovered pixels inherit the
// maximum covered value. Ordering survives, absolute scale does not.
Image1 mono_surrogate(const Image1& gt_depth, const MonoWarp& warp, uint64_t seed);

enum class InitMode { SurfaceSample, DepthBackproject };

// Surfel cloud seeded from ground truth: positions jittered by sigma_p,
// tangent frames from nearest-point normals with a random in-plane spin,
// isotropic scales from the mean nearest-neighbor spacing, opacity 0.5,
// colors sampled from the nearest covering view.
SplatSet init_splats(const SceneBundle& gt, size_t count, double sigma_p,
                     InitMode mode, uint64_t seed);

}  // namespace splatfit

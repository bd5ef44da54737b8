#include "splatfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "splatfit/point_grid.hpp"
#include "splatfit/rng.hpp"

namespace splatfit {

namespace {

constexpr double kHitEps = 1e-5;      // sphere-tracing surface band
constexpr double kGradStep = 1e-5;    // central-difference step for the field
constexpr double kCloudEps = 1e-9;    // Newton projection target for GT points
constexpr int kMaxTraceSteps = 512;

// two fixed directional lights plus a small view-dependent highlight, so the
// same surface point shades differently across views
const Vec3 kLightDir0 = Vec3(0.5, 0.3, 0.8).normalized();
const Vec3 kLightDir1 = Vec3(-0.6, -0.7, 0.3).normalized();
constexpr double kLightI0 = 0.75;
constexpr double kLightI1 = 0.35;
constexpr double kAmbient = 0.12;
constexpr double kSpecular = 0.12;
constexpr double kShininess = 24.0;

double sdf_sphere(const SpherePrimitive& s, const Vec3& p) {
  return (p - s.center).norm() - s.radius;
}

double sdf_box(const BoxPrimitive& b, const Vec3& p) {
  const Vec3 q = (p - b.center).cwiseAbs() - b.half_extents;
  const Vec3 outside = q.cwiseMax(0.0);
  return outside.norm() + std::min(q.maxCoeff(), 0.0);
}

double smooth_union(double a, double b, double k) {
  if (k <= 0.0) return std::min(a, b);
  const double h = std::clamp(0.5 + 0.5 * (b - a) / k, 0.0, 1.0);
  return b * (1.0 - h) + a * h - k * h * (1.0 - h);
}

double lattice_noise(int64_t ix, int64_t iy, int64_t iz) {
  uint64_t h = fnv1a64(&ix, sizeof ix);
  h = fnv1a64(&iy, sizeof iy, h);
  h = fnv1a64(&iz, sizeof iz, h);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(const Vec3& p) {
  const Vec3 f(std::floor(p.x()), std::floor(p.y()), std::floor(p.z()));
  const int64_t ix = static_cast<int64_t>(f.x());
  const int64_t iy = static_cast<int64_t>(f.y());
  const int64_t iz = static_cast<int64_t>(f.z());
  const Vec3 t = p - f;
  const Vec3 w = t.cwiseProduct(t).cwiseProduct(Vec3(3, 3, 3) - 2.0 * t);
  double out = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double wc = (dx ? w.x() : 1 - w.x()) * (dy ? w.y() : 1 - w.y()) *
                      (dz ? w.z() : 1 - w.z());
    out += wc * lattice_noise(ix + dx, iy + dy, iz + dz);
  }
  return out;
}

double fbm(const Vec3& p) {
  double sum = 0.0, amp = 0.5, freq = 1.0;
  for (int o = 0; o < 4; ++o) {
    sum += amp * value_noise(p * freq);
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum;
}

Vec3 shade(const SceneSpec& spec, const Vec3& p, const Vec3& n, const Vec3& view) {
  const Vec3 albedo = texture_color(spec.texture, p);
  double diffuse = kAmbient;
  double spec_sum = 0.0;
  const Vec3 dirs[2] = {kLightDir0, kLightDir1};
  const double intensity[2] = {kLightI0, kLightI1};
  for (int i = 0; i < 2; ++i) {
    diffuse += intensity[i] * std::max(0.0, n.dot(dirs[i]));
    const Vec3 half = (dirs[i] + view).normalized();
    spec_sum += intensity[i] * std::pow(std::max(0.0, n.dot(half)), kShininess);
  }
  Vec3 c = albedo * diffuse + Vec3::Ones() * (kSpecular * spec_sum);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

void validate_scene_spec(const SceneSpec& spec) {
  if (spec.rig.count < 2) throw InvalidSpecError("rig needs at least 2 views");
  if (spec.rig.radius <= 0 || spec.rig.focal <= 0)
    throw InvalidSpecError("rig radius and focal must be positive");
  if (!spec.rig.azimuths_deg.empty() &&
      spec.rig.azimuths_deg.size() != static_cast<size_t>(spec.rig.count))
    throw InvalidSpecError("azimuth list must match the view count");
  if (spec.image_size < 8) throw InvalidSpecError("image size must be >= 8");
  if (spec.spheres.empty() && spec.boxes.empty())
    throw InvalidSpecError("scene needs at least one primitive");
  for (const SpherePrimitive& s : spec.spheres) {
    if (s.radius <= 0) throw InvalidSpecError("sphere radius must be positive");
    if (s.center.norm() + s.radius > 1.0 + 1e-9)
      throw InvalidSpecError("sphere leaves the unit bounding sphere");
  }
  for (const BoxPrimitive& b : spec.boxes) {
    if ((b.half_extents.array() <= 0).any())
      throw InvalidSpecError("box half-extents must be positive");
    if (b.center.norm() + b.half_extents.norm() > 1.0 + 1e-9)
      throw InvalidSpecError("box leaves the unit bounding sphere");
  }
  if (!(spec.blend_k >= 0) || !std::isfinite(spec.blend_k))
    throw InvalidSpecError("blend width must be finite and >= 0");
  if (spec.texture.kind != "checker" && spec.texture.kind != "marble")
    throw InvalidSpecError("unknown texture kind: " + spec.texture.kind);
  if (spec.texture.scale <= 0) throw InvalidSpecError("texture scale must be positive");
  if (spec.mono.gamma <= 0 || spec.mono.a <= 0)
    throw InvalidSpecError("mono warp needs gamma > 0 and a > 0");
  if (spec.mono.sigma_n < 0) throw InvalidSpecError("mono noise must be >= 0");
  if (spec.gt_point_count < 1) throw InvalidSpecError("need at least one GT point");
}

double scene_sdf(const SceneSpec& spec, const Vec3& p) {
  double d = 0.0;
  bool first = true;
  const auto fold = [&](double prim) {
    d = first ? prim : smooth_union(d, prim, spec.blend_k);
    first = false;
  };
  for (const SpherePrimitive& s : spec.spheres) fold(sdf_sphere(s, p));
  for (const BoxPrimitive& b : spec.boxes) fold(sdf_box(b, p));
  return d;
}

Vec3 scene_sdf_gradient(const SceneSpec& spec, const Vec3& p) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 dp = Vec3::Zero();
    dp[a] = kGradStep;
    g[a] = (scene_sdf(spec, p + dp) - scene_sdf(spec, p - dp)) / (2 * kGradStep);
  }
  return g;
}

Vec3 texture_color(const TextureSpec& tex, const Vec3& p) {
  if (tex.kind == "checker") {
    const Vec3 q = p / tex.scale;
    const int64_t parity = static_cast<int64_t>(std::floor(q.x())) +
                           static_cast<int64_t>(std::floor(q.y())) +
                           static_cast<int64_t>(std::floor(q.z()));
    return ((parity % 2 + 2) % 2 == 0) ? tex.color_a : tex.color_b;
  }
  // marble: sinusoidal veins distorted by fractal noise
  const double phase = p.x() / tex.scale + 6.0 * fbm(p * (2.0 / tex.scale));
  const double m = 0.5 + 0.5 * std::sin(phase);
  return tex.color_a * (1.0 - m) + tex.color_b * m;
}

Camera rig_camera(const SceneSpec& spec, int view_index) {
  if (view_index < 0 || view_index >= spec.rig.count)
    throw InvalidSpecError("view index out of range");
  const double azimuth =
      spec.rig.azimuths_deg.empty()
          ? 2.0 * M_PI * view_index / spec.rig.count
          : spec.rig.azimuths_deg[view_index] * M_PI / 180.0;
  const double ce = std::cos(spec.rig.elevation);
  const Vec3 origin = spec.rig.target +
                      spec.rig.radius * Vec3(ce * std::cos(azimuth),
                                             ce * std::sin(azimuth),
                                             std::sin(spec.rig.elevation));
  const double half = spec.image_size * 0.5;
  return camera_look_at(origin, spec.rig.target, Vec3(0, 0, 1), spec.rig.focal,
                        spec.rig.focal, half, half, spec.image_size,
                        spec.image_size);
}

TraceResult trace_ray(const SceneSpec& spec, const Ray& ray) {
  const double t_max = ray.origin.norm() + 4.0;
  double t = 0.0;
  for (int step = 0; step < kMaxTraceSteps; ++step) {
    const Vec3 p = ray.origin + t * ray.dir;
    const double s = scene_sdf(spec, p);
    if (std::abs(s) < kHitEps) return {true, t};
    t += s;
    if (t > t_max || t < 0.0) return {false, 0.0};
  }
  return {false, 0.0};
}

SceneBundle generate_scene(const SceneSpec& spec) {
  validate_scene_spec(spec);
  SceneBundle bundle;
  const int size = spec.image_size;
  for (int vi = 0; vi < spec.rig.count; ++vi) {
    ViewData view;
    view.cam = rig_camera(spec, vi);
    view.rgb = Image3(size, size);
    view.depth = Image1(size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const Ray ray = ray_through_pixel(view.cam, Vec2(x + 0.5, y + 0.5));
        const TraceResult hit = trace_ray(spec, ray);
        if (!hit.hit) continue;
        view.depth.at(x, y) = hit.t;
        const Vec3 p = ray.origin + hit.t * ray.dir;
        Vec3 n = scene_sdf_gradient(spec, p);
        n = n.norm() > 1e-12 ? Vec3(n.normalized()) : Vec3(-ray.dir);
        const Vec3 c = shade(spec, p, n, Vec3(-ray.dir));
        for (int ch = 0; ch < 3; ++ch) view.rgb.at(x, y, ch) = c[ch];
      }
    }
    view.mono = mono_surrogate(view.depth, spec.mono,
                               derive_seed(spec.seed, "mono-" + std::to_string(vi)));
    bundle.views.push_back(std::move(view));
  }

  Rng rng = make_rng(spec.seed, "gt-cloud");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  bundle.gt_points.points.reserve(spec.gt_point_count);
  bundle.gt_points.normals.reserve(spec.gt_point_count);
  size_t attempts = 0;
  const size_t max_attempts = 20000 * spec.gt_point_count + 1000000;
  while (bundle.gt_points.points.size() < spec.gt_point_count) {
    if (++attempts > max_attempts)
      throw EmptySurfaceError("surface sampling failed to converge");
    Vec3 p(u(rng), u(rng), u(rng));
    if (p.squaredNorm() > 1.0) continue;
    if (std::abs(scene_sdf(spec, p)) > 0.1) continue;
    bool ok = false;
    for (int it = 0; it < 32; ++it) {
      const double s = scene_sdf(spec, p);
      if (std::abs(s) < kCloudEps) {
        ok = true;
        break;
      }
      const Vec3 g = scene_sdf_gradient(spec, p);
      const double g2 = g.squaredNorm();
      if (g2 < 1e-12) break;
      p -= g * (s / g2);
    }
    if (!ok || p.norm() > 1.0 + 1e-6) continue;
    Vec3 n = scene_sdf_gradient(spec, p);
    if (n.norm() < 1e-12) continue;
    bundle.gt_points.points.push_back(p);
    bundle.gt_points.normals.push_back(n.normalized());
  }
  return bundle;
}

Image1 mono_surrogate(const Image1& gt_depth, const MonoWarp& warp, uint64_t seed) {
  if (warp.gamma <= 0 || warp.a <= 0)
    throw InvalidSpecError("mono warp needs gamma > 0 and a > 0");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Image1 mono(gt_depth.width(), gt_depth.height());
  double max_covered = 0.0;
  bool any = false;
  for (int y = 0; y < gt_depth.height(); ++y) {
    for (int x = 0; x < gt_depth.width(); ++x) {
      // draw for every pixel so the stream does not depend on coverage
      const double n = noise(rng);
      const double d = gt_depth.at(x, y);
      if (d <= 0.0) continue;
      const double v = warp.a * std::pow(d, warp.gamma) + warp.b + warp.sigma_n * n;
      mono.at(x, y) = v;
      max_covered = any ? std::max(max_covered, v) : v;
      any = true;
    }
  }
  if (!any) return mono;
  for (int y = 0; y < gt_depth.height(); ++y)
    for (int x = 0; x < gt_depth.width(); ++x)
      if (gt_depth.at(x, y) <= 0.0) mono.at(x, y) = max_covered;
  return mono;
}

SplatSet init_splats(const SceneBundle& gt, size_t count, double sigma_p,
                     InitMode mode, uint64_t seed) {
  if (count < 1) throw InvalidSpecError("need at least one surfel");
  if (gt.views.empty()) throw InvalidSpecError("bundle has no views");
  if (gt.gt_points.points.empty()) throw EmptyPointSetError("bundle has no GT points");
  if (gt.gt_points.normals.size() != gt.gt_points.points.size())
    throw InvalidSpecError("GT cloud lacks per-point normals");

  Rng rng = make_rng(seed, "init-splats");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uang(0.0, 2.0 * M_PI);

  struct Seeded {
    Vec3 base;
    Vec3 normal;
  };
  std::vector<Seeded> seeds(count);

  if (mode == InitMode::SurfaceSample) {
    std::uniform_int_distribution<size_t> pick(0, gt.gt_points.points.size() - 1);
    for (Seeded& s : seeds) {
      const size_t i = pick(rng);
      s = {gt.gt_points.points[i], gt.gt_points.normals[i]};
    }
  } else {
    struct CoveredPixel {
      int view, x, y;
    };
    std::vector<CoveredPixel> covered;
    for (size_t vi = 0; vi < gt.views.size(); ++vi) {
      const Image1& d = gt.views[vi].depth;
      for (int y = 0; y < d.height(); ++y)
        for (int x = 0; x < d.width(); ++x)
          if (d.at(x, y) > 0.0) covered.push_back({static_cast<int>(vi), x, y});
    }
    if (covered.empty()) throw EmptyPointSetError("no covered depth pixels");
    const PointGrid cloud_grid(gt.gt_points.points);
    std::uniform_int_distribution<size_t> pick(0, covered.size() - 1);
    for (Seeded& s : seeds) {
      const CoveredPixel c = covered[pick(rng)];
      const ViewData& v = gt.views[c.view];
      s.base = unproject_pixel(v.cam, Vec2(c.x + 0.5, c.y + 0.5),
                               v.depth.at(c.x, c.y));
      s.normal = gt.gt_points.normals[cloud_grid.nearest(s.base).index];
    }
  }

  SplatSet splats(count);
  for (size_t i = 0; i < count; ++i) {
    const Vec3 jitter(gauss(rng), gauss(rng), gauss(rng));
    splats[i].center = seeds[i].base + sigma_p * jitter;

    const Vec3 n = seeds[i].normal;
    const Vec3 a = std::abs(n.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
    const Vec3 t1 = n.cross(a).normalized();
    const Vec3 t2 = n.cross(t1);
    const double theta = uang(rng);
    const Vec3 r1 = std::cos(theta) * t1 + std::sin(theta) * t2;
    Mat3 frame;
    frame.col(0) = r1;
    frame.col(1) = n.cross(r1);
    frame.col(2) = n;
    quat_from_rotation(frame, splats[i].rot);
    splats[i].opacity_logit = 0.0;
  }

  std::vector<Vec3> centers(count);
  for (size_t i = 0; i < count; ++i) centers[i] = splats[i].center;
  double mean_nn = 1e-3;
  if (count > 1) {
    const PointGrid center_grid(centers);
    double sum = 0.0;
    for (size_t i = 0; i < count; ++i)
      sum += center_grid.nearest(centers[i], static_cast<int64_t>(i)).distance;
    mean_nn = std::max(sum / static_cast<double>(count), 1e-6);
  }
  const double log_scale = std::log(mean_nn);
  for (Splat& s : splats) s.log_scales[0] = s.log_scales[1] = log_scale;

  for (Splat& s : splats) {
    double best_dist = std::numeric_limits<double>::infinity();
    Vec3 color(0.5, 0.5, 0.5);
    for (const ViewData& v : gt.views) {
      const auto proj = try_project(v.cam, s.center);
      if (!proj) continue;
      const int px = static_cast<int>(std::floor(proj->pixel.x()));
      const int py = static_cast<int>(std::floor(proj->pixel.y()));
      if (!v.rgb.in_bounds(px, py)) continue;
      const double dist = (s.center - v.cam.translation).norm();
      if (dist < best_dist) {
        best_dist = dist;
        color = Vec3(v.rgb.at(px, py, 0), v.rgb.at(px, py, 1), v.rgb.at(px, py, 2));
      }
    }
    s.color = color;
  }
  return splats;
}

namespace {

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3)
    throw InvalidSpecError("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

nlohmann::json vec3_to_json(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

}  // namespace

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec spec;
  try {
    spec.seed = j.value("seed", spec.seed);
    spec.image_size = j.value("image_size", spec.image_size);
    spec.blend_k = j.value("blend_k", spec.blend_k);
    spec.gt_point_count = j.value("gt_points", spec.gt_point_count);
    if (j.contains("rig")) {
      const auto& r = j.at("rig");
      spec.rig.count = r.value("count", spec.rig.count);
      spec.rig.radius = r.value("radius", spec.rig.radius);
      spec.rig.elevation = r.value("elevation", spec.rig.elevation);
      spec.rig.focal = r.value("focal", spec.rig.focal);
      if (r.contains("target")) spec.rig.target = vec3_from_json(r.at("target"));
      if (r.contains("azimuths_deg"))
        spec.rig.azimuths_deg = r.at("azimuths_deg").get<std::vector<double>>();
    }
    if (j.contains("texture")) {
      const auto& t = j.at("texture");
      spec.texture.kind = t.value("kind", spec.texture.kind);
      spec.texture.scale = t.value("scale", spec.texture.scale);
      if (t.contains("color_a")) spec.texture.color_a = vec3_from_json(t.at("color_a"));
      if (t.contains("color_b")) spec.texture.color_b = vec3_from_json(t.at("color_b"));
    }
    if (j.contains("mono")) {
      const auto& m = j.at("mono");
      spec.mono.gamma = m.value("gamma", spec.mono.gamma);
      spec.mono.a = m.value("a", spec.mono.a);
      spec.mono.b = m.value("b", spec.mono.b);
      spec.mono.sigma_n = m.value("sigma_n", spec.mono.sigma_n);
    }
    if (j.contains("primitives")) {
      for (const auto& p : j.at("primitives")) {
        const std::string type = p.at("type").get<std::string>();
        if (type == "sphere") {
          SpherePrimitive s;
          if (p.contains("center")) s.center = vec3_from_json(p.at("center"));
          s.radius = p.value("radius", s.radius);
          spec.spheres.push_back(s);
        } else if (type == "box") {
          BoxPrimitive b;
          if (p.contains("center")) b.center = vec3_from_json(p.at("center"));
          if (p.contains("half_extents"))
            b.half_extents = vec3_from_json(p.at("half_extents"));
          spec.boxes.push_back(b);
        } else {
          throw InvalidSpecError("unknown primitive type: " + type);
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpecError(std::string("scene spec: ") + e.what());
  }
  return spec;
}

nlohmann::json scene_spec_to_json(const SceneSpec& spec) {
  nlohmann::json j;
  j["seed"] = spec.seed;
  j["image_size"] = spec.image_size;
  j["blend_k"] = spec.blend_k;
  j["gt_points"] = spec.gt_point_count;
  j["rig"] = {{"count", spec.rig.count},
              {"radius", spec.rig.radius},
              {"elevation", spec.rig.elevation},
              {"focal", spec.rig.focal},
              {"target", vec3_to_json(spec.rig.target)}};
  if (!spec.rig.azimuths_deg.empty()) j["rig"]["azimuths_deg"] = spec.rig.azimuths_deg;
  j["texture"] = {{"kind", spec.texture.kind},
                  {"scale", spec.texture.scale},
                  {"color_a", vec3_to_json(spec.texture.color_a)},
                  {"color_b", vec3_to_json(spec.texture.color_b)}};
  j["mono"] = {{"gamma", spec.mono.gamma},
               {"a", spec.mono.a},
               {"b", spec.mono.b},
               {"sigma_n", spec.mono.sigma_n}};
  j["primitives"] = nlohmann::json::array();
  for (const SpherePrimitive& s : spec.spheres)
    j["primitives"].push_back(
        {{"type", "sphere"}, {"center", vec3_to_json(s.center)}, {"radius", s.radius}});
  for (const BoxPrimitive& b : spec.boxes)
    j["primitives"].push_back({{"type", "box"},
                               {"center", vec3_to_json(b.center)},
                               {"half_extents", vec3_to_json(b.half_extents)}});
  return j;
}

SceneSpec reference_scene_spec() {
  SceneSpec spec;
  SpherePrimitive sphere;
  sphere.center = Vec3(-0.18, 0.0, 0.0);
  sphere.radius = 0.4;
  spec.spheres.push_back(sphere);
  BoxPrimitive box;
  box.center = Vec3(0.25, 0.05, -0.1);
  box.half_extents = Vec3(0.28, 0.22, 0.2);
  spec.boxes.push_back(box);
  spec.blend_k = 0.08;
  spec.texture.kind = "checker";
  spec.texture.scale = 0.22;
  spec.rig.count = 6;
  spec.rig.azimuths_deg = {0, 120, 240, 60, 180, 300};
  spec.image_size = 64;
  return spec;
}

}  // namespace splatfit

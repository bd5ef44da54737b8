#pragma once
// File formats: 8-bit RGB PNG, 32-bit float PFM (grayscale, bottom-up,
// little-endian), binary-little-endian PLY, ASCII OBJ, camera JSON.
// Loaders validate their input and throw IoError naming the offending path.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "splatfit/geometry.hpp"
#include "splatfit/image.hpp"
#include "splatfit/mesh.hpp"
#include "splatfit/splat.hpp"

namespace splatfit {

std::string read_text_file(const std::filesystem::path& path);
// Writes a sibling temp file and renames it into place so readers never
// observe partial content.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Values clamped to [0,1] and quantized to 8 bits per channel.
void save_png(const std::filesystem::path& path, const Image3& image);
Image3 load_png(const std::filesystem::path& path);

void save_pfm(const std::filesystem::path& path, const Image1& image);
Image1 load_pfm(const std::filesystem::path& path);

void save_camera_json(const std::filesystem::path& path, const Camera& cam);
Camera load_camera_json(const std::filesystem::path& path);

// Thirteen float32 fields per surfel: position, rotation quaternion,
// log scales, opacity logit, color.
void save_splats_ply(const std::filesystem::path& path, const SplatSet& splats);
SplatSet load_splats_ply(const std::filesystem::path& path);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty, or one per point
};

void save_points_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_points_ply(const std::filesystem::path& path);

void save_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh load_mesh_ply(const std::filesystem::path& path);
void save_mesh_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

struct ViewData {
  Camera cam;
  Image3 rgb;
  Image1 depth;  // ray-parameter convention; 0 marks uncovered pixels
  Image1 mono;
};

struct SceneBundle {
  std::vector<ViewData> views;
  PointCloud gt_points;
};

// Directory layout: cam_{i}.json, rgb_{i}.png, depth_{i}.pfm, mono_{i}.pfm,
// gt_points.ply. Any extra files (e.g. spec.json) are left untouched.
void save_bundle(const std::filesystem::path& dir, const SceneBundle& bundle);
SceneBundle load_bundle(const std::filesystem::path& dir);

}  // namespace splatfit

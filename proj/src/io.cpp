#include "splatfit/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "splatfit/jsonutil.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace splatfit {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw IoError(path.string() + ": " + what);
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(path, "cannot open");
  return in;
}

void write_f32(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  out.write(reinterpret_cast<const char*>(&f), 4);
}

double read_f32(std::istream& in) {
  float f = 0;
  in.read(reinterpret_cast<char*>(&f), 4);
  return static_cast<double>(f);
}

struct PngReadState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReadState() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngWriteState() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) fail(path, "read error");
  return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out = open_out(tmp, true);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(tmp, "write error");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(path, "rename failed: " + ec.message());
}

void save_png(const std::filesystem::path& path, const Image3& image) {
  std::vector<unsigned char> row(static_cast<size_t>(image.width()) * 3);
  PngWriteState st;
  st.fp = std::fopen(path.c_str(), "wb");
  if (!st.fp) fail(path, "cannot open for writing");
  st.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!st.png) fail(path, "png_create_write_struct failed");
  st.info = png_create_info_struct(st.png);
  if (!st.info) fail(path, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(st.png))) fail(path, "libpng write error");

  png_init_io(st.png, st.fp);
  png_set_IHDR(st.png, st.info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(st.png, st.info);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(x, y, c), 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    png_write_row(st.png, row.data());
  }
  png_write_end(st.png, nullptr);
}

Image3 load_png(const std::filesystem::path& path) {
  std::vector<unsigned char> data;
  std::vector<png_bytep> rows;
  Image3 image;
  PngReadState st;
  st.fp = std::fopen(path.c_str(), "rb");
  if (!st.fp) fail(path, "cannot open");
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!st.png) fail(path, "png_create_read_struct failed");
  st.info = png_create_info_struct(st.png);
  if (!st.info) fail(path, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(st.png))) fail(path, "malformed PNG");

  png_init_io(st.png, st.fp);
  png_read_info(st.png, st.info);
  const int width = static_cast<int>(png_get_image_width(st.png, st.info));
  const int height = static_cast<int>(png_get_image_height(st.png, st.info));
  const int color_type = png_get_color_type(st.png, st.info);
  const int bit_depth = png_get_bit_depth(st.png, st.info);

  png_set_expand(st.png);
  if (bit_depth == 16) png_set_strip_16(st.png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(st.png);
  png_set_strip_alpha(st.png);
  png_read_update_info(st.png, st.info);
  if (png_get_rowbytes(st.png, st.info) != static_cast<size_t>(width) * 3)
    fail(path, "unexpected row layout after decode");

  data.resize(static_cast<size_t>(width) * height * 3);
  rows.resize(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[y] = data.data() + static_cast<size_t>(y) * width * 3;
  png_read_image(st.png, rows.data());
  png_read_end(st.png, nullptr);

  image = Image3(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(x, y, c) = data[(static_cast<size_t>(y) * width + x) * 3 + c] / 255.0;
  return image;
}

void save_pfm(const std::filesystem::path& path, const Image1& image) {
  std::ofstream out = open_out(path, true);
  out << "Pf\n" << image.width() << " " << image.height() << "\n-1.0\n";
  // negative scale marks little-endian; rows stored bottom-up
  for (int y = image.height() - 1; y >= 0; --y)
    for (int x = 0; x < image.width(); ++x) write_f32(out, image.at(x, y));
  if (!out) fail(path, "write error");
}

Image1 load_pfm(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  std::string magic;
  int width = 0, height = 0;
  double scale = 0;
  in >> magic >> width >> height >> scale;
  if (!in || magic != "Pf") fail(path, "not a grayscale PFM");
  if (width < 1 || height < 1) fail(path, "invalid dimensions");
  if (scale >= 0) fail(path, "big-endian PFM not supported");
  in.get();  // single whitespace byte after the scale token
  Image1 image(width, height);
  for (int y = height - 1; y >= 0; --y)
    for (int x = 0; x < width; ++x) image.at(x, y) = read_f32(in);
  if (!in) fail(path, "truncated pixel data");
  return image;
}

void save_camera_json(const std::filesystem::path& path, const Camera& cam) {
  cam.validate();
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  nlohmann::json c2w = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) c2w.push_back(cam.rotation(r, c));
    c2w.push_back(cam.translation[r]);
  }
  j["c2w"] = std::move(c2w);
  write_json_atomic(path, j);
}

Camera load_camera_json(const std::filesystem::path& path) {
  const nlohmann::json j = parse_json_file(path);
  Camera cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const auto& c2w = j.at("c2w");
    if (!c2w.is_array() || c2w.size() != 12) fail(path, "c2w must hold 12 numbers");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = c2w[r * 4 + c].get<double>();
      cam.translation[r] = c2w[r * 4 + 3].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(path, std::string("camera JSON: ") + e.what());
  }
  try {
    cam.validate();
  } catch (const Error& e) {
    fail(path, std::string("invalid camera: ") + e.what());
  }
  return cam;
}

namespace {

constexpr const char* kSplatProps[kSplatParamCount] = {
    "x",           "y",           "z",           "rot_w",        "rot_x",
    "rot_y",       "rot_z",       "log_scale_u", "log_scale_v",  "opacity_logit",
    "red",         "green",       "blue"};

// Strict reader for the headers this module writes: binary little-endian,
// one vertex element with the given float properties (then optional extra
// elements handled by the caller).
struct PlyHeader {
  size_t vertex_count = 0;
  std::vector<std::string> vertex_props;
  size_t face_count = 0;  // 0 when absent
};

PlyHeader read_ply_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") fail(path, "missing ply magic");
  if (!std::getline(in, line) || line != "format binary_little_endian 1.0")
    fail(path, "expected binary_little_endian 1.0");
  PlyHeader h;
  std::string element;
  while (std::getline(in, line)) {
    if (line == "end_header") return h;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "element") {
      size_t count = 0;
      ls >> element >> count;
      if (element == "vertex")
        h.vertex_count = count;
      else if (element == "face")
        h.face_count = count;
      else
        fail(path, "unsupported element: " + element);
    } else if (tok == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") {
        std::string idx_type, val_type;
        ls >> idx_type >> val_type >> name;
        if (element != "face" || idx_type != "uchar" || val_type != "int")
          fail(path, "unsupported list property");
      } else {
        ls >> name;
        if (element == "vertex") {
          if (type != "float") fail(path, "vertex properties must be float32");
          h.vertex_props.push_back(name);
        }
      }
    } else {
      fail(path, "unexpected header line: " + line);
    }
  }
  fail(path, "truncated header");
}

}  // namespace

void save_splats_ply(const std::filesystem::path& path, const SplatSet& splats) {
  std::ofstream out = open_out(path, true);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << splats.size() << "\n";
  for (const char* p : kSplatProps) out << "property float " << p << "\n";
  out << "end_header\n";
  for (const Splat& s : splats)
    for (int k = 0; k < kSplatParamCount; ++k) write_f32(out, splat_param(s, k));
  if (!out) fail(path, "write error");
}

SplatSet load_splats_ply(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  const PlyHeader h = read_ply_header(in, path);
  if (h.vertex_props.size() != kSplatParamCount) fail(path, "wrong property count");
  for (int k = 0; k < kSplatParamCount; ++k)
    if (h.vertex_props[k] != kSplatProps[k])
      fail(path, "unexpected property order: " + h.vertex_props[k]);
  SplatSet splats(h.vertex_count);
  for (Splat& s : splats)
    for (int k = 0; k < kSplatParamCount; ++k) set_splat_param(s, k, read_f32(in));
  if (!in) fail(path, "truncated splat data");
  return splats;
}

void save_points_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  const bool with_normals = !cloud.normals.empty();
  if (with_normals && cloud.normals.size() != cloud.points.size())
    throw DimensionMismatchError("normal count does not match point count");
  std::ofstream out = open_out(path, true);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << cloud.points.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (with_normals)
    out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "end_header\n";
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    for (int c = 0; c < 3; ++c) write_f32(out, cloud.points[i][c]);
    if (with_normals)
      for (int c = 0; c < 3; ++c) write_f32(out, cloud.normals[i][c]);
  }
  if (!out) fail(path, "write error");
}

PointCloud load_points_ply(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  const PlyHeader h = read_ply_header(in, path);
  const std::vector<std::string> xyz = {"x", "y", "z"};
  const std::vector<std::string> xyzn = {"x", "y", "z", "nx", "ny", "nz"};
  const bool with_normals = h.vertex_props == xyzn;
  if (!with_normals && h.vertex_props != xyz) fail(path, "expected xyz[+normals]");
  PointCloud cloud;
  cloud.points.resize(h.vertex_count);
  if (with_normals) cloud.normals.resize(h.vertex_count);
  for (size_t i = 0; i < h.vertex_count; ++i) {
    for (int c = 0; c < 3; ++c) cloud.points[i][c] = read_f32(in);
    if (with_normals)
      for (int c = 0; c < 3; ++c) cloud.normals[i][c] = read_f32(in);
  }
  if (!in) fail(path, "truncated point data");
  return cloud;
}

void save_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  validate_mesh(mesh);
  std::ofstream out = open_out(path, true);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "element face " << mesh.triangles.size() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  for (const Vec3& v : mesh.vertices)
    for (int c = 0; c < 3; ++c) write_f32(out, v[c]);
  for (const auto& t : mesh.triangles) {
    const unsigned char n = 3;
    out.write(reinterpret_cast<const char*>(&n), 1);
    int32_t idx[3] = {t[0], t[1], t[2]};
    out.write(reinterpret_cast<const char*>(idx), 12);
  }
  if (!out) fail(path, "write error");
}

TriangleMesh load_mesh_ply(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  const PlyHeader h = read_ply_header(in, path);
  if (h.vertex_props != std::vector<std::string>{"x", "y", "z"})
    fail(path, "expected xyz vertices");
  TriangleMesh mesh;
  mesh.vertices.resize(h.vertex_count);
  for (Vec3& v : mesh.vertices)
    for (int c = 0; c < 3; ++c) v[c] = read_f32(in);
  mesh.triangles.resize(h.face_count);
  for (auto& t : mesh.triangles) {
    unsigned char n = 0;
    in.read(reinterpret_cast<char*>(&n), 1);
    if (n != 3) fail(path, "non-triangle face");
    int32_t idx[3];
    in.read(reinterpret_cast<char*>(idx), 12);
    t = {idx[0], idx[1], idx[2]};
  }
  if (!in) fail(path, "truncated mesh data");
  validate_mesh(mesh);
  return mesh;
}

void save_mesh_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  validate_mesh(mesh);
  std::ofstream out = open_out(path, false);
  out.precision(9);
  for (const Vec3& v : mesh.vertices)
    out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!out) fail(path, "write error");
}

void validate_mesh(const TriangleMesh& mesh) {
  for (const Vec3& v : mesh.vertices)
    if (!v.allFinite()) throw InvalidSpecError("mesh vertex is not finite");
  const int n = static_cast<int>(mesh.vertices.size());
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= n)
        throw InvalidSpecError("triangle index out of range");
}

void save_bundle(const std::filesystem::path& dir, const SceneBundle& bundle) {
  if (bundle.views.empty()) throw InvalidSpecError("bundle has no views");
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < bundle.views.size(); ++i) {
    const ViewData& v = bundle.views[i];
    const std::string n = std::to_string(i);
    save_camera_json(dir / ("cam_" + n + ".json"), v.cam);
    save_png(dir / ("rgb_" + n + ".png"), v.rgb);
    save_pfm(dir / ("depth_" + n + ".pfm"), v.depth);
    save_pfm(dir / ("mono_" + n + ".pfm"), v.mono);
  }
  save_points_ply(dir / "gt_points.ply", bundle.gt_points);
}

SceneBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError(dir.string() + ": not a directory");
  SceneBundle bundle;
  for (size_t i = 0;; ++i) {
    const std::string n = std::to_string(i);
    const auto cam_path = dir / ("cam_" + n + ".json");
    if (!std::filesystem::exists(cam_path)) break;
    ViewData v;
    v.cam = load_camera_json(cam_path);
    v.rgb = load_png(dir / ("rgb_" + n + ".png"));
    v.depth = load_pfm(dir / ("depth_" + n + ".pfm"));
    v.mono = load_pfm(dir / ("mono_" + n + ".pfm"));
    const auto check = [&](int w, int h, const char* what) {
      if (w != v.cam.width || h != v.cam.height)
        fail(dir, std::string(what) + " size does not match camera " + n);
    };
    check(v.rgb.width(), v.rgb.height(), "rgb");
    check(v.depth.width(), v.depth.height(), "depth");
    check(v.mono.width(), v.mono.height(), "mono");
    bundle.views.push_back(std::move(v));
  }
  if (bundle.views.empty()) fail(dir, "no cam_0.json found");
  bundle.gt_points = load_points_ply(dir / "gt_points.ply");
  return bundle;
}

}  // namespace splatfit

#include "splatfit/fusion.hpp"

#include <cmath>
#include <unordered_map>

#include "splatfit/errors.hpp"
#include "splatfit/point_grid.hpp"

namespace splatfit {

namespace {

// Cell layout. Corners 0..3 ring the z=0 face, 4..7 the z=1 face; edge e
// runs kEdgeCorner[e][0] -> [e][1]; faces list their corners
// counterclockwise as seen from outside the cell.
constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                     {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorner[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                    {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                    {0, 4}, {1, 5}, {2, 6}, {3, 7}};
constexpr int kFaceCorner[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                   {2, 3, 7, 6}, {0, 4, 7, 3}, {1, 2, 6, 5}};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    const int u = kEdgeCorner[e][0], v = kEdgeCorner[e][1];
    if ((u == a && v == b) || (u == b && v == a)) return e;
  }
  return -1;
}

// Contour segments of one face, directed so the inside region sits on the
// left when viewed from outside the cell. Faces with two diagonal inside
// corners split into two segments that isolate each inside corner; both
// cells sharing a face see the same four corner signs and the same rule, so
// their segments agree and the extracted surface cannot crack.
void face_segments(int c, int face, int next[12]) {
  const int* q = kFaceCorner[face];
  bool in[4];
  for (int i = 0; i < 4; ++i) in[i] = (c >> q[i]) & 1;
  int leave[2], enter[2], nl = 0, ne = 0;
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 1) & 3;
    if (in[i] && !in[j]) leave[nl++] = i;
    if (!in[i] && in[j]) enter[ne++] = i;
  }
  if (nl == 0) return;
  auto cell_edge = [&](int i) { return edge_between(q[i], q[(i + 1) & 3]); };
  if (nl == 1) {
    next[cell_edge(leave[0])] = cell_edge(enter[0]);
    return;
  }
  // diagonal: pair each leaving edge with the entering edge that shares its
  // inside corner, i.e. the face edge immediately before it
  for (int s = 0; s < 2; ++s)
    next[cell_edge(leave[s])] = cell_edge((leave[s] + 3) & 3);
}

SurfaceTables build_tables() {
  SurfaceTables t;
  for (int c = 0; c < 256; ++c) {
    uint16_t mask = 0;
    for (int e = 0; e < 12; ++e) {
      const bool a = (c >> kEdgeCorner[e][0]) & 1;
      const bool b = (c >> kEdgeCorner[e][1]) & 1;
      if (a != b) mask |= uint16_t(1) << e;
    }
    t.edge_mask[c] = mask;

    int next[12];
    for (int e = 0; e < 12; ++e) next[e] = -1;
    for (int f = 0; f < 6; ++f) face_segments(c, f, next);

    bool used[12] = {};
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || used[start]) continue;
      int loop[12], n = 0;
      for (int e = start; !used[e]; e = next[e]) {
        used[e] = true;
        loop[n++] = e;
      }
      // walking with inside-on-left yields inward fans; reverse for
      // outward-facing triangles
      for (int i = 1; i + 1 < n; ++i) {
        t.tri[c].push_back(loop[0]);
        t.tri[c].push_back(loop[i + 1]);
        t.tri[c].push_back(loop[i]);
      }
    }
  }
  return t;
}

}  // namespace

const SurfaceTables& surface_tables() {
  static const SurfaceTables tables = build_tables();
  return tables;
}

TsdfVolume make_unit_volume(double voxel, double tau) {
  if (!(voxel > 0))
    throw InvalidSpecError("voxel size must be positive");
  if (!(tau >= 2 * voxel))
    throw InvalidSpecError("truncation band must span at least two voxels");
  TsdfVolume vol;
  vol.voxel = voxel;
  vol.tau = tau;
  const double extent = 1.0 + 3.0 * tau;
  vol.origin = Vec3(-extent, -extent, -extent);
  const int n = int(std::ceil(2.0 * extent / voxel)) + 1;
  vol.nx = vol.ny = vol.nz = n;
  vol.values.assign(size_t(n) * n * n, 1.0f);
  vol.weights.assign(size_t(n) * n * n, 0.0f);
  return vol;
}

void integrate_view(TsdfVolume& vol, const Camera& cam, const Image1& depth,
                    const Image1& acc, double min_coverage) {
  cam.validate();
  if (depth.width() != cam.width || depth.height() != cam.height ||
      !depth.same_shape(acc))
    throw DimensionMismatchError("depth/acc images do not match the camera");
  for (int i = 0; i < vol.nx; ++i)
    for (int j = 0; j < vol.ny; ++j)
      for (int k = 0; k < vol.nz; ++k) {
        const Vec3 x = vol.node_position(i, j, k);
        const auto proj = try_project(cam, x);
        if (!proj) continue;
        const int px = int(std::floor(proj->pixel.x()));
        const int py = int(std::floor(proj->pixel.y()));
        if (!depth.in_bounds(px, py)) continue;
        if (acc.at(px, py) < min_coverage) continue;
        const double d = depth.at(px, py);
        if (!(d > 0)) continue;
        const double sdf = d - (x - cam.translation).norm();
        if (sdf < -vol.tau) continue;
        const float v = float(std::min(sdf, vol.tau) / vol.tau);
        const size_t id = vol.node_index(i, j, k);
        const float w = vol.weights[id];
        vol.values[id] = (vol.values[id] * w + v) / (w + 1.0f);
        vol.weights[id] = w + 1.0f;
      }
}

TriangleMesh marching_cubes(const TsdfVolume& vol) {
  const SurfaceTables& tab = surface_tables();
  TriangleMesh mesh;
  std::unordered_map<uint64_t, int> welded;

  // global key of the vertex on edge e of cell (i,j,k): owning node id * 3
  // + axis; interpolation always starts from the axis-low node so both
  // adjacent cells derive bit-identical positions
  auto emit_vertex = [&](int i, int j, int k, int e) {
    const int* a = kCornerOffset[kEdgeCorner[e][0]];
    const int* b = kCornerOffset[kEdgeCorner[e][1]];
    int lo[3], axis = 0;
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(a[d], b[d]);
      if (a[d] != b[d]) axis = d;
    }
    int hi[3] = {lo[0], lo[1], lo[2]};
    ++hi[axis];
    const size_t n0 = vol.node_index(i + lo[0], j + lo[1], k + lo[2]);
    const size_t n1 = vol.node_index(i + hi[0], j + hi[1], k + hi[2]);
    const uint64_t key = uint64_t(n0) * 3 + axis;
    const auto found = welded.find(key);
    if (found != welded.end()) return found->second;
    const double v0 = vol.values[n0], v1 = vol.values[n1];
    const double t = v0 / (v0 - v1);
    const Vec3 p0 = vol.node_position(i + lo[0], j + lo[1], k + lo[2]);
    const Vec3 p1 = vol.node_position(i + hi[0], j + hi[1], k + hi[2]);
    const int id = int(mesh.vertices.size());
    mesh.vertices.push_back(p0 + t * (p1 - p0));
    welded.emplace(key, id);
    return id;
  };

  for (int i = 0; i + 1 < vol.nx; ++i)
    for (int j = 0; j + 1 < vol.ny; ++j)
      for (int k = 0; k + 1 < vol.nz; ++k) {
        int c = 0;
        bool observed = true;
        for (int q = 0; q < 8; ++q) {
          const int* o = kCornerOffset[q];
          const size_t id = vol.node_index(i + o[0], j + o[1], k + o[2]);
          if (vol.weights[id] <= 0) {
            observed = false;
            break;
          }
          if (vol.values[id] < 0) c |= 1 << q;
        }
        if (!observed) continue;
        const std::vector<int>& tri = tab.tri[c];
        for (size_t s = 0; s + 2 < tri.size(); s += 3) {
          const int va = emit_vertex(i, j, k, tri[s]);
          const int vb = emit_vertex(i, j, k, tri[s + 1]);
          const int vc = emit_vertex(i, j, k, tri[s + 2]);
          if (va == vb || vb == vc || va == vc) continue;
          mesh.triangles.push_back({va, vb, vc});
        }
      }

  if (mesh.triangles.empty())
    throw EmptySurfaceError("no observed cell crosses the surface");
  return mesh;
}

ChamferResult chamfer_distance(const std::vector<Vec3>& predicted,
                               const std::vector<Vec3>& reference) {
  if (predicted.empty() || reference.empty())
    throw EmptyPointSetError("chamfer distance needs two non-empty clouds");
  const PointGrid pred_grid(predicted);
  const PointGrid ref_grid(reference);
  ChamferResult r;
  for (const Vec3& p : predicted) r.accuracy += ref_grid.nearest(p).distance;
  for (const Vec3& p : reference) r.completeness += pred_grid.nearest(p).distance;
  r.accuracy /= double(predicted.size());
  r.completeness /= double(reference.size());
  r.chamfer = (r.accuracy + r.completeness) / 2.0;
  return r;
}

std::vector<Vec3> sample_mesh_points(const TriangleMesh& mesh, size_t count,
                                     Rng& rng) {
  validate_mesh(mesh);
  if (mesh.triangles.empty())
    throw EmptySurfaceError("cannot sample an empty mesh");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    const Vec3 ab = mesh.vertices[t[1]] - mesh.vertices[t[0]];
    const Vec3 ac = mesh.vertices[t[2]] - mesh.vertices[t[0]];
    total += 0.5 * ab.cross(ac).norm();
    cumulative[i] = total;
  }
  if (!(total > 0))
    throw EmptySurfaceError("mesh has zero surface area");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> points;
  points.reserve(count);
  for (size_t s = 0; s < count; ++s) {
    const double pick = uni(rng) * total;
    const size_t i = std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                     cumulative.begin();
    const auto& t = mesh.triangles[std::min(i, mesh.triangles.size() - 1)];
    const double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
    points.push_back((1 - r1) * mesh.vertices[t[0]] +
                     r1 * (1 - r2) * mesh.vertices[t[1]] +
                     r1 * r2 * mesh.vertices[t[2]]);
  }
  return points;
}

DepthMetrics depth_metrics(const Image1& pred_depth, const Image1& pred_acc,
                           const Image1& gt_depth, double unit,
                           double min_coverage) {
  if (!pred_depth.same_shape(pred_acc) || !pred_depth.same_shape(gt_depth))
    throw DimensionMismatchError("depth metric images must share a shape");
  if (!(unit > 0)) throw InvalidSpecError("depth metric unit must be positive");
  DepthMetrics m;
  for (int y = 0; y < gt_depth.height(); ++y)
    for (int x = 0; x < gt_depth.width(); ++x) {
      const double gt = gt_depth.at(x, y);
      if (!(gt > 0)) continue;
      if (pred_acc.at(x, y) < min_coverage) continue;
      const double pred = pred_depth.at(x, y);
      if (!(pred > 0)) continue;
      const double err = std::abs(pred - gt);
      m.pct1 += err < unit;
      m.pct2 += err < 2 * unit;
      m.pct4 += err < 4 * unit;
      m.abs_err += err;
      m.rel_err += err / gt;
      ++m.evaluated;
    }
  if (m.evaluated == 0)
    throw NoOverlapError("no pixel is covered in both depth maps");
  const double n = double(m.evaluated);
  m.pct1 /= n;
  m.pct2 /= n;
  m.pct4 /= n;
  m.abs_err /= n;
  m.rel_err /= n;
  return m;
}

}  // namespace splatfit

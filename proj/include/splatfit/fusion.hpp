#pragma once
// Depth-map fusion into a truncated signed-distance volume, isosurface
// extraction with vertices welded across cells, and the point-cloud / depth
// evaluation metrics.

#include <array>
#include <vector>

#include "splatfit/geometry.hpp"
#include "splatfit/image.hpp"
#include "splatfit/mesh.hpp"
#include "splatfit/rng.hpp"

namespace splatfit {

// Signed distances sampled at lattice NODES (not cell centers); node (i,j,k)
// sits at origin + voxel * (i,j,k). `values` hold sdf / tau clamped to
// [-1, 1]; nodes with weight 0 have never been observed.
struct TsdfVolume {
  Vec3 origin = Vec3::Zero();
  double voxel = 0.01;
  double tau = 0.03;  // truncation band in world units
  int nx = 0, ny = 0, nz = 0;
  std::vector<float> values;
  std::vector<float> weights;

  size_t node_index(int i, int j, int k) const {
    return (size_t(i) * ny + j) * nz + k;
  }
  Vec3 node_position(int i, int j, int k) const {
    return origin + voxel * Vec3(i, j, k);
  }
};

// Node lattice covering the unit sphere plus a 3*tau margin on every side.
// Throws InvalidSpecError unless voxel > 0 and tau >= 2 * voxel.
TsdfVolume make_unit_volume(double voxel, double tau);

// Projective TSDF update. Every node projects into the view; pixels with
// acc >= min_coverage and positive depth contribute sdf = pixel depth -
// node-to-camera distance. Nodes more than tau behind the surface are left
// untouched; the rest fold clamp(sdf, -tau, tau) / tau into a weight-1
// running average. Throws DimensionMismatchError when image sizes disagree
// with the camera.
void integrate_view(TsdfVolume& vol, const Camera& cam, const Image1& depth,
                    const Image1& acc, double min_coverage = 0.5);

// Zero isosurface of the fused field. A cell participates only when all
// eight corner nodes have been observed; vertices are interpolated on
// sign-crossing cell edges (t = v0 / (v0 - v1)) and welded across cells via
// global edge keys. Triangles that collapse onto fewer than three distinct
// vertices are dropped. Throws EmptySurfaceError when no cell crosses zero.
TriangleMesh marching_cubes(const TsdfVolume& vol);

// Triangulation lookup behind marching_cubes, exposed for verification.
// Corner bit i of a case is set when corner i is inside (value < 0);
// edge_mask bit e is set when edge e has exactly one inside endpoint;
// tri[c] lists vertex edge ids (0..11) in winding-consistent triples.
struct SurfaceTables {
  std::array<uint16_t, 256> edge_mask{};
  std::array<std::vector<int>, 256> tri{};
};
const SurfaceTables& surface_tables();

struct ChamferResult {
  double accuracy = 0;      // mean predicted -> reference nearest distance
  double completeness = 0;  // mean reference -> predicted nearest distance
  double chamfer = 0;       // mean of the two
};

// Exact nearest neighbors in both directions. Throws EmptyPointSetError
// when either cloud is empty.
ChamferResult chamfer_distance(const std::vector<Vec3>& predicted,
                               const std::vector<Vec3>& reference);

// Uniform-density surface sampling: triangles chosen by area, points by the
// square-root barycentric map.
std::vector<Vec3> sample_mesh_points(const TriangleMesh& mesh, size_t count,
                                     Rng& rng);

struct DepthMetrics {
  double pct1 = 0, pct2 = 0, pct4 = 0;  // fraction with |err| < 1/2/4 units
  double abs_err = 0;                   // mean |pred - gt|
  double rel_err = 0;                   // mean |pred - gt| / gt
  size_t evaluated = 0;                 // pixels covered in both maps
};

// Compares depth maps over pixels covered in both: gt > 0 and predicted
// acc >= min_coverage with positive depth. `unit` scales the percent
// thresholds. Throws NoOverlapError when no pixel qualifies,
// DimensionMismatchError on shape mismatch.
DepthMetrics depth_metrics(const Image1& pred_depth, const Image1& pred_acc,
                           const Image1& gt_depth, double unit,
                           double min_coverage = 0.5);

}  // namespace splatfit

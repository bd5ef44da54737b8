#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splatfit/geometry.hpp"
#include "splatfit/image.hpp"
#include "splatfit/rng.hpp"
#include "splatfit/splat.hpp"

namespace splatfit {

// One accepted compositing term. Contributions are stored in compositing
// order (ascending depth, splat id breaking ties).
struct ContribRecord {
  int32_t splat;
  double omega;   // alpha * accumulated transmittance
  double depth;   // Euclidean ray parameter of the hit
  double gvalue;  // Gaussian falloff at the hit
  double alpha;   // opacity * gvalue
  double u, v;    // plane coordinates of the hit
};

// Full per-view render result. depth is the omega-weighted mean ray depth
// sum(w_i d_i) / (sum w_i + 1e-8); normal is the normalized omega-weighted
// splat normal (zero where coverage < 1e-6); acc is sum(w_i).
struct RenderBuffers {
  int width = 0, height = 0;
  Image3 color;
  Image1 depth;
  Image3 normal;
  Image1 acc;
  std::vector<ContribRecord> contribs;
  std::vector<int32_t> offsets;  // size width*height + 1, indexed by y*width + x

  std::span<const ContribRecord> pixel_contribs(int x, int y) const {
    const size_t p = static_cast<size_t>(y) * width + x;
    return {contribs.data() + offsets[p],
            static_cast<size_t>(offsets[p + 1] - offsets[p])};
  }
};

struct PixelSample {
  Vec3 color = Vec3::Zero();
  double depth = 0;
  Vec3 normal = Vec3::Zero();
  double acc = 0;
  std::vector<ContribRecord> contribs;
};

struct RenderOptions {
  int threads = 1;
};

// Composites one ray against every splat in the set (no culling). Hits are
// ordered by (depth, splat id); terms with alpha < 1/255 are skipped and
// accumulation stops once transmittance drops below 1e-4.
PixelSample composite_pixel(const Ray& ray, const SplatSet& splats);

// Renders every pixel ray of the camera. Splats are first culled with a
// conservative screen-space bound of their 3-sigma footprint; per pixel the
// result is bit-identical to composite_pixel on the same splat set.
RenderBuffers render_view(const Camera& cam, const SplatSet& splats,
                          const RenderOptions& opts = {});

using SplatGrads = std::vector<SplatGrad>;

// Adjoints flowing back into a rendered view. Empty images / vectors mean
// zero. d_omega and d_contrib_depth index into RenderBuffers::contribs;
// d_splat_normal holds per-splat adjoints of the unit normal.
struct RenderAdjoints {
  Image3 d_color;
  Image1 d_depth;
  std::vector<double> d_omega;
  std::vector<double> d_contrib_depth;
  std::vector<Vec3> d_splat_normal;
};

// Analytic backward pass of render_view. Gates baked into the forward pass
// (hit acceptance, the alpha skip, the transmittance stop) are treated as
// constants. Deterministic for a fixed thread count.
SplatGrads render_backward(const Camera& cam, const SplatSet& splats,
                           const RenderBuffers& buffers,
                           const RenderAdjoints& adjoints,
                           const RenderOptions& opts = {});

// Surface normals from a depth image via forward differences of unprojected
// points, oriented toward the camera. Pixels whose (right, down) neighbors
// are missing or uncovered (acc < 1e-6) get a zero normal. The per-pixel
// evaluation and orientation decisions are folded into `gate` when given.
Image3 depth_to_normal(const Camera& cam, const Image1& depth, const Image1& acc,
                       GateHash* gate = nullptr);

// Backward pass of depth_to_normal: scatters the normal-image adjoint into
// a depth-image adjoint. Orientation flips are treated as constants.
Image1 depth_to_normal_backward(const Camera& cam, const Image1& depth,
                                const Image1& acc, const Image3& d_normal);

namespace detail {

struct RawHit {
  int32_t splat;
  double u, v, depth, g;
};

struct PixelRect {
  int x0, x1, y0, y1;  // inclusive pixel index bounds
};

// Conservative pixel-rect bound of the projected 3-sigma disk. Returns false
// when the splat cannot touch any pixel center.
bool project_bbox(const Camera& cam, const PreparedSplat& s, PixelRect& out);

}  // namespace detail

}  // namespace splatfit

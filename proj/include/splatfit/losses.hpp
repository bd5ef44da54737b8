#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splatfit/features.hpp"
#include "splatfit/geometry.hpp"
#include "splatfit/image.hpp"
#include "splatfit/render.hpp"
#include "splatfit/rng.hpp"

namespace splatfit {

struct LossWeights {
  double lambda_rank = 1.0;
  double lambda_smooth = 0.5;
  double lambda_feature = 0.2;
  double lambda_distortion = 100.0;
  double lambda_normal = 0.05;
  double ssim_mix = 0.2;          // SSIM share inside the color loss
  double rank_margin = 1e-3;      // m
  double smooth_depth_margin = 1e-3;  // m_t
  double smooth_mono_margin = 0.01;   // m_e, on min-max normalized mono depth
  int patch_size = 16;
  int pyramid_levels = 3;  // scales {1, 2, 4, ...}
};

std::vector<int> pyramid_scales(int levels);

// ----- photometric -----

// Mean SSIM over all pixels and channels; 11x11 Gaussian window (sigma 1.5),
// border-renormalized, K1 = 0.01, K2 = 0.03, dynamic range 1.
double ssim_mean(const Image3& a, const Image3& b);

struct ColorLossResult {
  double loss = 0;
  double mae = 0;
  double ssim = 0;
  Image3 d_rendered;
};

// (1 - mix) * MAE + mix * (1 - SSIM), evaluated on every pixel.
ColorLossResult color_loss(const Image3& rendered, const Image3& target,
                           double ssim_mix, GateHash* gate = nullptr);

// ----- intra-view depth consistency -----

struct PatchPermutation {
  int x0 = 0, y0 = 0, side = 0;
  std::vector<int> perm;  // pairing partner per in-patch index
};

// Tiles the image with full patch_size x patch_size patches and draws one
// uniform permutation per patch.
std::vector<PatchPermutation> make_patch_permutations(int width, int height,
                                                      int patch_size, Rng& rng);

struct PatchRankResult {
  double sum = 0;     // sum of active hinge terms, not normalized
  int64_t pairs = 0;  // pairs that passed the validity and tie gates
};

// Ranking hinge over the pairs (j, perm[j]). Pairs with an invalid endpoint
// or a monocular difference within tie_eps are skipped. d_rendered, when
// non-empty, accumulates the unnormalized gradient.
PatchRankResult ranking_patch(std::span<const double> rendered,
                              std::span<const double> mono,
                              std::span<const uint8_t> valid,
                              std::span<const int> perm, double margin,
                              double tie_eps, std::span<double> d_rendered,
                              GateHash* gate = nullptr);

struct ImageLossResult {
  double loss = 0;
  int64_t terms = 0;
  Image1 d_depth;
};

// Patch ranking over a rendered depth image. Pixels with coverage below 1e-6
// are invalid; ties are relative to 1e-6 of the full monocular value range;
// the loss is the active-hinge sum divided by the total evaluated pair count.
ImageLossResult ranking_loss(const Image1& depth, const Image1& mono,
                             const Image1& acc,
                             const std::vector<PatchPermutation>& patches,
                             double margin, GateHash* gate = nullptr);

// Edge-aware smoothing: for right/down neighbor pairs of covered pixels whose
// min-max normalized monocular values differ by less than mono_margin,
// penalizes ReLU(|depth difference| - depth_margin); mean over evaluated
// pairs.
ImageLossResult smoothness_loss(const Image1& depth, const Image1& mono,
                                const Image1& acc, double mono_margin,
                                double depth_margin, GateHash* gate = nullptr);

// ----- multi-view feature alignment -----

// Occlusion-aware visibility: points projecting into the same integer pixel
// cell of the source camera compete and only the one closest to the source
// origin is visible (ties go to the lower index). Points behind the camera
// or outside the frame are not visible.
std::vector<uint8_t> visibility_mask(const std::vector<Vec3>& points,
                                     const Camera& src);

struct SourceView {
  const Camera* cam = nullptr;
  const FeaturePyramid* pyramid = nullptr;
};

// Reprojection feature consistency. Every covered reference pixel is lifted
// to a world point with the rendered depth, reprojected into each source
// view, occlusion-tested, and compared against the source features at every
// pyramid scale with weight 1/scale on (1 - cosine similarity); mean over
// accumulated terms. The gradient flows only through the rendered depth.
ImageLossResult feature_loss(const Camera& ref_cam, const Image1& depth,
                             const Image1& acc, const FeaturePyramid& ref_pyramid,
                             std::span<const SourceView> sources,
                             const std::vector<int>& scales,
                             GateHash* gate = nullptr);

// ----- per-contribution regularizers -----

struct DistortionLossResult {
  double loss = 0;
  std::vector<double> d_omega;
  std::vector<double> d_contrib_depth;
};

// Pairwise depth spread of each covered pixel's contributions,
// 2 * sum_{i<j} w_i w_j |d_i - d_j|, averaged over covered pixels.
DistortionLossResult distortion_loss(const RenderBuffers& buffers,
                                     GateHash* gate = nullptr);

struct NormalLossResult {
  double loss = 0;
  std::vector<double> d_omega;
  std::vector<Vec3> d_splat_normal;
  Image3 d_normal_image;
};

// Alignment of per-splat normals (flipped toward the camera) with the
// normals derived from the rendered depth image; mean over pixels with a
// valid derived normal.
NormalLossResult normal_loss(const Camera& cam, const RenderBuffers& buffers,
                             const Image3& normal_from_depth,
                             const SplatSet& splats, GateHash* gate = nullptr);

// ----- combined objective -----

struct ViewTarget {
  Camera cam;
  const Image3* rgb = nullptr;
  const Image1* mono = nullptr;
  const FeaturePyramid* pyramid = nullptr;
};

struct LossBreakdown {
  double total = 0;
  double color = 0, rank = 0, smooth = 0, feature = 0, distortion = 0, normal = 0;
};

struct TotalLossResult {
  LossBreakdown losses;
  SplatGrads grads;
};

// Renders the reference view, evaluates every enabled loss, and backpropagates
// the combined adjoints through the renderer in one pass. Losses with zero
// weight (or the feature loss before warmup) are skipped and reported as 0.
TotalLossResult total_loss(const ViewTarget& ref,
                           std::span<const SourceView> sources,
                           const SplatSet& splats,
                           const std::vector<PatchPermutation>& patches,
                           const LossWeights& weights, bool enable_feature,
                           const RenderOptions& opts = {},
                           GateHash* gate = nullptr);

}  // namespace splatfit

#include "splatfit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "splatfit/errors.hpp"

namespace splatfit {

namespace {
constexpr double kCoverageEps = 1e-6;
constexpr double kTieRangeFactor = 1e-6;
}

std::vector<int> pyramid_scales(int levels) {
  if (levels < 1) throw InvalidSpecError("pyramid level count must be positive");
  std::vector<int> scales(levels);
  for (int i = 0; i < levels; ++i) scales[i] = 1 << i;
  return scales;
}

std::vector<PatchPermutation> make_patch_permutations(int width, int height,
                                                      int patch_size, Rng& rng) {
  if (patch_size < 2) throw InvalidSpecError("patch size must be at least 2");
  std::vector<PatchPermutation> patches;
  const int n = patch_size * patch_size;
  for (int y0 = 0; y0 + patch_size <= height; y0 += patch_size) {
    for (int x0 = 0; x0 + patch_size <= width; x0 += patch_size) {
      PatchPermutation p;
      p.x0 = x0;
      p.y0 = y0;
      p.side = patch_size;
      p.perm.resize(n);
      std::iota(p.perm.begin(), p.perm.end(), 0);
      for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(p.perm[i], p.perm[pick(rng)]);
      }
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

PatchRankResult ranking_patch(std::span<const double> rendered,
                              std::span<const double> mono,
                              std::span<const uint8_t> valid,
                              std::span<const int> perm, double margin,
                              double tie_eps, std::span<double> d_rendered,
                              GateHash* gate) {
  const size_t n = rendered.size();
  if (mono.size() != n || valid.size() != n || perm.size() != n ||
      (!d_rendered.empty() && d_rendered.size() != n)) {
    throw DimensionMismatchError("ranking patch spans differ in size");
  }

  PatchRankResult out;
  for (size_t j = 0; j < n; ++j) {
    const int k = perm[j];
    if (!valid[j] || !valid[static_cast<size_t>(k)]) {
      if (gate) gate->fold(j << 2 | 0);
      continue;
    }
    const double dm = mono[k] - mono[j];
    if (std::abs(dm) <= tie_eps) {
      if (gate) gate->fold(j << 2 | 1);
      continue;
    }
    const double sgn = dm > 0 ? 1.0 : -1.0;
    const double arg = sgn * (rendered[j] - rendered[k]) + margin;
    ++out.pairs;
    if (arg > 0) {
      out.sum += arg;
      if (!d_rendered.empty()) {
        d_rendered[j] += sgn;
        d_rendered[k] -= sgn;
      }
    }
    if (gate) gate->fold(j << 2 | (arg > 0 ? 2 : 3));
    if (gate) gate->fold(static_cast<uint64_t>(sgn + 2));
  }
  return out;
}

ImageLossResult ranking_loss(const Image1& depth, const Image1& mono,
                             const Image1& acc,
                             const std::vector<PatchPermutation>& patches,
                             double margin, GateHash* gate) {
  if (!depth.same_shape(mono) || !depth.same_shape(acc)) {
    throw DimensionMismatchError("ranking loss images differ in size");
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : mono.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double tie_eps = kTieRangeFactor * (hi - lo);

  ImageLossResult out;
  out.d_depth = Image1(depth.width(), depth.height(), 0.0);
  double sum = 0;
  int64_t pairs = 0;

  std::vector<double> pr, pm, pd;
  std::vector<uint8_t> pv;
  for (const PatchPermutation& p : patches) {
    const int n = p.side * p.side;
    pr.resize(n);
    pm.resize(n);
    pv.resize(n);
    pd.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const int x = p.x0 + i % p.side, y = p.y0 + i / p.side;
      pr[i] = depth.at(x, y);
      pm[i] = mono.at(x, y);
      pv[i] = acc.at(x, y) >= kCoverageEps ? 1 : 0;
    }
    const PatchRankResult r =
        ranking_patch(pr, pm, pv, p.perm, margin, tie_eps, pd, gate);
    sum += r.sum;
    pairs += r.pairs;
    for (int i = 0; i < n; ++i) {
      if (pd[i] != 0.0) {
        out.d_depth.at(p.x0 + i % p.side, p.y0 + i / p.side) += pd[i];
      }
    }
  }

  out.terms = pairs;
  if (pairs > 0) {
    out.loss = sum / pairs;
    for (double& v : out.d_depth.data()) v /= pairs;
  }
  return out;
}

ImageLossResult smoothness_loss(const Image1& depth, const Image1& mono,
                                const Image1& acc, double mono_margin,
                                double depth_margin, GateHash* gate) {
  if (!depth.same_shape(mono) || !depth.same_shape(acc)) {
    throw DimensionMismatchError("smoothness loss images differ in size");
  }
  const int w = depth.width(), h = depth.height();

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : mono.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo;
  const auto mono_norm = [&](int x, int y) {
    return range > 1e-12 ? (mono.at(x, y) - lo) / range : 0.0;
  };

  ImageLossResult out;
  out.d_depth = Image1(w, h, 0.0);
  double sum = 0;
  int64_t pairs = 0;

  const int dxs[2] = {1, 0}, dys[2] = {0, 1};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (acc.at(x, y) < kCoverageEps) continue;
      for (int d = 0; d < 2; ++d) {
        const int nx = x + dxs[d], ny = y + dys[d];
        if (nx >= w || ny >= h) continue;
        if (acc.at(nx, ny) < kCoverageEps) continue;
        const uint64_t pair_id = (static_cast<uint64_t>(y) * w + x) * 2 + d;
        if (std::abs(mono_norm(nx, ny) - mono_norm(x, y)) >= mono_margin) {
          if (gate) gate->fold(pair_id << 2 | 0);
          continue;
        }
        ++pairs;
        const double dd = depth.at(nx, ny) - depth.at(x, y);
        const double e = std::abs(dd) - depth_margin;
        if (e > 0) {
          sum += e;
          const double sgn = dd > 0 ? 1.0 : -1.0;
          out.d_depth.at(nx, ny) += sgn;
          out.d_depth.at(x, y) -= sgn;
          if (gate) gate->fold(pair_id << 2 | (sgn > 0 ? 1 : 2));
        } else if (gate) {
          gate->fold(pair_id << 2 | 3);
        }
      }
    }
  }

  out.terms = pairs;
  if (pairs > 0) {
    out.loss = sum / pairs;
    for (double& v : out.d_depth.data()) v /= pairs;
  }
  return out;
}

std::vector<uint8_t> visibility_mask(const std::vector<Vec3>& points,
                                     const Camera& src) {
  std::vector<uint8_t> visible(points.size(), 0);
  struct Best {
    double dist;
    size_t index;
  };
  std::unordered_map<int64_t, Best> cells;
  cells.reserve(points.size());

  for (size_t i = 0; i < points.size(); ++i) {
    const auto proj = try_project(src, points[i]);
    if (!proj) continue;
    const int px = static_cast<int>(std::floor(proj->pixel.x()));
    const int py = static_cast<int>(std::floor(proj->pixel.y()));
    if (px < 0 || px >= src.width || py < 0 || py >= src.height) continue;
    // floor can land exactly on width for pixel.x slightly below width
    const int64_t cell = static_cast<int64_t>(py) * src.width + px;
    const double dist = (points[i] - src.translation).norm();
    auto it = cells.find(cell);
    if (it == cells.end()) {
      cells.emplace(cell, Best{dist, i});
    } else if (dist < it->second.dist ||
               (dist == it->second.dist && i < it->second.index)) {
      it->second = Best{dist, i};
    }
  }
  for (const auto& [cell, best] : cells) visible[best.index] = 1;
  return visible;
}

ImageLossResult feature_loss(const Camera& ref_cam, const Image1& depth,
                             const Image1& acc, const FeaturePyramid& ref_pyramid,
                             std::span<const SourceView> sources,
                             const std::vector<int>& scales, GateHash* gate) {
  if (!depth.same_shape(acc)) {
    throw DimensionMismatchError("feature loss images differ in size");
  }
  const int w = depth.width(), h = depth.height();

  // covered pixels and their lifted world points
  std::vector<int> px_x, px_y;
  std::vector<Vec3> points, dirs;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (acc.at(x, y) < kCoverageEps) continue;
      const Ray ray = ray_through_pixel(ref_cam, Vec2(x + 0.5, y + 0.5));
      px_x.push_back(x);
      px_y.push_back(y);
      dirs.push_back(ray.dir);
      points.push_back(ray.origin + depth.at(x, y) * ray.dir);
    }
  }

  ImageLossResult out;
  out.d_depth = Image1(w, h, 0.0);
  double sum = 0;
  int64_t terms = 0;

  for (size_t si = 0; si < sources.size(); ++si) {
    const Camera& scam = *sources[si].cam;
    const FeaturePyramid& spyr = *sources[si].pyramid;
    const std::vector<uint8_t> visible = visibility_mask(points, scam);
    const Mat3 r_wc = scam.world_to_cam_rotation();

    for (size_t i = 0; i < points.size(); ++i) {
      if (gate) gate->fold_soft((si << 32) | (i << 1) | visible[i]);
      if (!visible[i]) continue;
      const auto proj = try_project(scam, points[i]);
      if (!proj) continue;

      // d(source pixel)/d(reference depth)
      const Vec3 xc = r_wc * (points[i] - scam.translation);
      const Vec3 dir_c = r_wc * dirs[i];
      const double z = xc.z();
      const Vec2 dp_dd(scam.fx * (dir_c.x() * z - xc.x() * dir_c.z()) / (z * z),
                       scam.fy * (dir_c.y() * z - xc.y() * dir_c.z()) / (z * z));

      double d_depth_term = 0;
      for (int scale : scales) {
        const FeatureSample fr = sample_feature(
            ref_pyramid, scale, Vec2(px_x[i] + 0.5, px_y[i] + 0.5));
        const FeatureSample fs = sample_feature(spyr, scale, proj->pixel);
        if (gate) {
          const int64_t cx = static_cast<int64_t>(
              std::floor(proj->pixel.x() / scale - 0.5));
          const int64_t cy = static_cast<int64_t>(
              std::floor(proj->pixel.y() / scale - 0.5));
          gate->fold_soft((static_cast<uint64_t>(cx) << 20) ^
                          static_cast<uint64_t>(cy) ^
                          (static_cast<uint64_t>(scale) << 40));
        }

        double dot = 0, na2 = 0, nb2 = 0;
        for (int c = 0; c < kFeatureChannels; ++c) {
          dot += fr.f[c] * fs.f[c];
          na2 += fr.f[c] * fr.f[c];
          nb2 += fs.f[c] * fs.f[c];
        }
        const double na = std::sqrt(na2), nb = std::sqrt(nb2);
        const double cn = na * nb + 1e-12;
        const double cosv = dot / cn;
        sum += (1.0 - cosv) / scale;
        ++terms;

        // d cos / d f_src, then through the bilinear sample and projection
        double gpx = 0, gpy = 0;
        for (int c = 0; c < kFeatureChannels; ++c) {
          const double dcos_db =
              fr.f[c] / cn - (nb > 1e-12 ? dot * na * fs.f[c] / (nb * cn * cn) : 0.0);
          gpx += -dcos_db * fs.dfdx[c] / scale;
          gpy += -dcos_db * fs.dfdy[c] / scale;
        }
        d_depth_term += gpx * dp_dd.x() + gpy * dp_dd.y();
      }
      out.d_depth.at(px_x[i], px_y[i]) += d_depth_term;
    }
  }

  out.terms = terms;
  if (terms > 0) {
    out.loss = sum / terms;
    for (double& v : out.d_depth.data()) v /= terms;
  }
  return out;
}

DistortionLossResult distortion_loss(const RenderBuffers& buffers, GateHash* gate) {
  DistortionLossResult out;
  out.d_omega.assign(buffers.contribs.size(), 0.0);
  out.d_contrib_depth.assign(buffers.contribs.size(), 0.0);

  double sum = 0;
  int64_t covered = 0;
  const int64_t npix = static_cast<int64_t>(buffers.width) * buffers.height;
  for (int64_t p = 0; p < npix; ++p) {
    const int32_t begin = buffers.offsets[p], end = buffers.offsets[p + 1];
    if (begin == end) continue;
    const int x = static_cast<int>(p % buffers.width);
    const int y = static_cast<int>(p / buffers.width);
    if (buffers.acc.at(x, y) < kCoverageEps) {
      if (gate) gate->fold(p << 1 | 0);
      continue;
    }
    if (gate) gate->fold(p << 1 | 1);
    ++covered;

    // contributions are depth-sorted, so |d_i - d_j| = d_j - d_i for i < j
    double w_pre = 0, s_pre = 0;   // prefix sums of omega and omega * depth
    double w_all = 0, s_all = 0;
    for (int32_t i = begin; i < end; ++i) {
      w_all += buffers.contribs[i].omega;
      s_all += buffers.contribs[i].omega * buffers.contribs[i].depth;
    }
    double w_post = w_all, s_post = s_all;
    for (int32_t i = begin; i < end; ++i) {
      const ContribRecord& c = buffers.contribs[i];
      w_post -= c.omega;
      s_post -= c.omega * c.depth;
      sum += 2.0 * c.omega * (c.depth * w_pre - s_pre);
      out.d_omega[i] =
          2.0 * ((s_post - c.depth * w_post) + (c.depth * w_pre - s_pre));
      out.d_contrib_depth[i] = 2.0 * c.omega * (w_pre - w_post);
      w_pre += c.omega;
      s_pre += c.omega * c.depth;
    }
  }

  if (covered > 0) {
    out.loss = sum / covered;
    for (double& v : out.d_omega) v /= covered;
    for (double& v : out.d_contrib_depth) v /= covered;
  }
  return out;
}

NormalLossResult normal_loss(const Camera& cam, const RenderBuffers& buffers,
                             const Image3& normal_from_depth,
                             const SplatSet& splats, GateHash* gate) {
  if (normal_from_depth.width() != buffers.width ||
      normal_from_depth.height() != buffers.height) {
    throw DimensionMismatchError("normal image does not match render size");
  }

  NormalLossResult out;
  out.d_omega.assign(buffers.contribs.size(), 0.0);
  out.d_splat_normal.assign(splats.size(), Vec3::Zero());
  out.d_normal_image = Image3(buffers.width, buffers.height, 0.0);

  std::vector<Vec3> normals(splats.size());
  for (size_t i = 0; i < splats.size(); ++i) {
    normals[i] = quat_to_rotation(splats[i].rot).col(2);
  }

  const int w = buffers.width, h = buffers.height;

  // first pass: count evaluated pixels so gradients can be normalized
  int64_t evaluated = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int64_t p = static_cast<int64_t>(y) * w + x;
      const Vec3 nd(normal_from_depth.at(x, y, 0), normal_from_depth.at(x, y, 1),
                    normal_from_depth.at(x, y, 2));
      const bool valid = buffers.offsets[p + 1] > buffers.offsets[p] &&
                         buffers.acc.at(x, y) >= kCoverageEps && !nd.isZero(0.0);
      if (gate) gate->fold(p << 1 | (valid ? 1 : 0));
      if (valid) ++evaluated;
    }
  }
  if (evaluated == 0) return out;

  double sum = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int64_t p = static_cast<int64_t>(y) * w + x;
      const int32_t begin = buffers.offsets[p], end = buffers.offsets[p + 1];
      if (begin == end || buffers.acc.at(x, y) < kCoverageEps) continue;
      const Vec3 nd(normal_from_depth.at(x, y, 0), normal_from_depth.at(x, y, 1),
                    normal_from_depth.at(x, y, 2));
      if (nd.isZero(0.0)) continue;

      const Vec3 dir = ray_through_pixel(cam, Vec2(x + 0.5, y + 0.5)).dir;
      Vec3 d_nd = Vec3::Zero();
      for (int32_t i = begin; i < end; ++i) {
        const ContribRecord& c = buffers.contribs[i];
        const Vec3& n = normals[c.splat];
        const double flip = n.dot(dir) <= 0 ? 1.0 : -1.0;
        if (gate) gate->fold((static_cast<uint64_t>(i) << 1) | (flip > 0 ? 1 : 0));
        const Vec3 nf = flip * n;
        sum += c.omega * (1.0 - nf.dot(nd));
        out.d_omega[i] = (1.0 - nf.dot(nd)) / evaluated;
        out.d_splat_normal[c.splat] += -flip * c.omega * nd / double(evaluated);
        d_nd += -c.omega * nf / double(evaluated);
      }
      for (int ch = 0; ch < 3; ++ch) out.d_normal_image.at(x, y, ch) = d_nd[ch];
    }
  }
  out.loss = sum / evaluated;
  return out;
}

TotalLossResult total_loss(const ViewTarget& ref,
                           std::span<const SourceView> sources,
                           const SplatSet& splats,
                           const std::vector<PatchPermutation>& patches,
                           const LossWeights& weights, bool enable_feature,
                           const RenderOptions& opts, GateHash* gate) {
  const RenderBuffers buf = render_view(ref.cam, splats, opts);
  if (gate) {
    for (size_t p = 0; p + 1 < buf.offsets.size(); ++p) {
      gate->fold(~static_cast<uint64_t>(p));
      for (int32_t i = buf.offsets[p]; i < buf.offsets[p + 1]; ++i) {
        gate->fold(static_cast<uint64_t>(buf.contribs[i].splat));
      }
    }
  }

  TotalLossResult out;
  RenderAdjoints adj;

  const ColorLossResult color =
      color_loss(buf.color, *ref.rgb, weights.ssim_mix, gate);
  out.losses.color = color.loss;
  adj.d_color = color.d_rendered;

  adj.d_depth = Image1(buf.width, buf.height, 0.0);
  if (weights.lambda_rank != 0.0) {
    const ImageLossResult rank =
        ranking_loss(buf.depth, *ref.mono, buf.acc, patches, weights.rank_margin, gate);
    out.losses.rank = rank.loss;
    for (size_t i = 0; i < adj.d_depth.data().size(); ++i) {
      adj.d_depth.data()[i] += weights.lambda_rank * rank.d_depth.data()[i];
    }
  }
  if (weights.lambda_smooth != 0.0) {
    const ImageLossResult smooth =
        smoothness_loss(buf.depth, *ref.mono, buf.acc, weights.smooth_mono_margin,
                        weights.smooth_depth_margin, gate);
    out.losses.smooth = smooth.loss;
    for (size_t i = 0; i < adj.d_depth.data().size(); ++i) {
      adj.d_depth.data()[i] += weights.lambda_smooth * smooth.d_depth.data()[i];
    }
  }
  if (weights.lambda_feature != 0.0 && enable_feature && !sources.empty()) {
    const ImageLossResult feat =
        feature_loss(ref.cam, buf.depth, buf.acc, *ref.pyramid, sources,
                     pyramid_scales(weights.pyramid_levels), gate);
    out.losses.feature = feat.loss;
    for (size_t i = 0; i < adj.d_depth.data().size(); ++i) {
      adj.d_depth.data()[i] += weights.lambda_feature * feat.d_depth.data()[i];
    }
  }
  if (weights.lambda_distortion != 0.0) {
    DistortionLossResult dist = distortion_loss(buf, gate);
    out.losses.distortion = dist.loss;
    adj.d_omega = std::move(dist.d_omega);
    adj.d_contrib_depth = std::move(dist.d_contrib_depth);
    for (double& v : adj.d_omega) v *= weights.lambda_distortion;
    for (double& v : adj.d_contrib_depth) v *= weights.lambda_distortion;
  }
  if (weights.lambda_normal != 0.0) {
    const Image3 nd = depth_to_normal(ref.cam, buf.depth, buf.acc, gate);
    NormalLossResult norm = normal_loss(ref.cam, buf, nd, splats, gate);
    out.losses.normal = norm.loss;
    if (adj.d_omega.empty()) adj.d_omega.assign(buf.contribs.size(), 0.0);
    for (size_t i = 0; i < adj.d_omega.size(); ++i) {
      adj.d_omega[i] += weights.lambda_normal * norm.d_omega[i];
    }
    adj.d_splat_normal = std::move(norm.d_splat_normal);
    for (Vec3& v : adj.d_splat_normal) v *= weights.lambda_normal;

    for (double& v : norm.d_normal_image.data()) v *= weights.lambda_normal;
    const Image1 dd =
        depth_to_normal_backward(ref.cam, buf.depth, buf.acc, norm.d_normal_image);
    for (size_t i = 0; i < adj.d_depth.data().size(); ++i) {
      adj.d_depth.data()[i] += dd.data()[i];
    }
  }

  out.losses.total = out.losses.color + weights.lambda_rank * out.losses.rank +
                     weights.lambda_smooth * out.losses.smooth +
                     weights.lambda_feature * out.losses.feature +
                     weights.lambda_distortion * out.losses.distortion +
                     weights.lambda_normal * out.losses.normal;

  out.grads = render_backward(ref.cam, splats, buf, adj, opts);
  return out;
}

}  // namespace splatfit

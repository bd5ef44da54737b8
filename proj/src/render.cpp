#include "splatfit/render.hpp"

#include <algorithm>
#include <cmath>

#include "splatfit/errors.hpp"
#include "splatfit/parallel.hpp"

namespace splatfit {

namespace {

constexpr double kAlphaSkip = 1.0 / 255.0;
constexpr double kStopTransmittance = 1e-4;
constexpr double kDepthDenomEps = 1e-8;
constexpr double kCoverageEps = 1e-6;

std::vector<PreparedSplat> prepare_all(const SplatSet& splats) {
  std::vector<PreparedSplat> prepared;
  prepared.reserve(splats.size());
  for (const Splat& s : splats) prepared.push_back(prepare_splat(s));
  return prepared;
}

void sort_hits(std::vector<detail::RawHit>& hits) {
  std::sort(hits.begin(), hits.end(),
            [](const detail::RawHit& a, const detail::RawHit& b) {
              if (a.depth != b.depth) return a.depth < b.depth;
              return a.splat < b.splat;
            });
}

struct PixelOut {
  Vec3 color = Vec3::Zero();
  double depth = 0;
  Vec3 normal = Vec3::Zero();
  double acc = 0;
};

// Front-to-back compositing of sorted hits. Shared by composite_pixel and
// render_view so both produce bit-identical results.
PixelOut composite_hits(const std::vector<detail::RawHit>& hits,
                        const std::vector<PreparedSplat>& prepared,
                        std::vector<ContribRecord>& out_contribs) {
  double transmittance = 1.0;
  Vec3 color = Vec3::Zero(), normal_sum = Vec3::Zero();
  double depth_sum = 0, acc = 0;
  for (const detail::RawHit& h : hits) {
    const PreparedSplat& s = prepared[h.splat];
    const double alpha = s.opacity * h.g;
    if (alpha < kAlphaSkip) continue;
    const double omega = alpha * transmittance;
    color += omega * s.color;
    depth_sum += omega * h.depth;
    normal_sum += omega * s.n;
    acc += omega;
    out_contribs.push_back({h.splat, omega, h.depth, h.g, alpha, h.u, h.v});
    transmittance *= 1.0 - alpha;
    if (transmittance < kStopTransmittance) break;
  }
  PixelOut out;
  out.color = color;
  out.depth = depth_sum / (acc + kDepthDenomEps);
  out.acc = acc;
  if (acc >= kCoverageEps && normal_sum.norm() > 1e-12) {
    out.normal = normal_sum.normalized();
  }
  return out;
}

}  // namespace

namespace detail {

bool project_bbox(const Camera& cam, const PreparedSplat& s, PixelRect& out) {
  const Mat3 r_wc = cam.world_to_cam_rotation();
  const Vec3 a1 = r_wc * (s.s1 * s.t1);
  const Vec3 a2 = r_wc * (s.s2 * s.t2);
  const Vec3 b = r_wc * s.center + cam.world_to_cam_translation();

  const double z_amp = 3.0 * std::hypot(a1.z(), a2.z());
  if (b.z() + z_amp <= 0.0) return false;  // disk entirely behind the camera

  const PixelRect full{0, cam.width - 1, 0, cam.height - 1};
  if (b.z() - z_amp <= 1e-6) {
    out = full;  // disk crosses the camera plane; projection is unbounded
    return true;
  }

  // Rows of H = K [a1 a2 b] map plane coordinates to homogeneous pixels; the
  // dual conic M = H diag(9, 9, -1) H^T bounds the projected 3-sigma disk.
  const Vec3 hx(cam.fx * a1.x() + cam.cx * a1.z(),
                cam.fx * a2.x() + cam.cx * a2.z(),
                cam.fx * b.x() + cam.cx * b.z());
  const Vec3 hy(cam.fy * a1.y() + cam.cy * a1.z(),
                cam.fy * a2.y() + cam.cy * a2.z(),
                cam.fy * b.y() + cam.cy * b.z());
  const Vec3 hw(a1.z(), a2.z(), b.z());

  const auto dual = [](const Vec3& p, const Vec3& q) {
    return 9.0 * (p.x() * q.x() + p.y() * q.y()) - p.z() * q.z();
  };
  const double m00 = dual(hx, hx), m02 = dual(hx, hw);
  const double m11 = dual(hy, hy), m12 = dual(hy, hw);
  const double m22 = dual(hw, hw);

  if (m22 >= -1e-12) {
    out = full;
    return true;
  }
  const double disc_x = m02 * m02 - m00 * m22;
  const double disc_y = m12 * m12 - m11 * m22;
  if (disc_x < 0 || disc_y < 0) {
    out = full;
    return true;
  }

  const double x_lo = (m02 + std::sqrt(disc_x)) / m22;
  const double x_hi = (m02 - std::sqrt(disc_x)) / m22;
  const double y_lo = (m12 + std::sqrt(disc_y)) / m22;
  const double y_hi = (m12 - std::sqrt(disc_y)) / m22;

  // Pixels whose centers (ix + 0.5) lie inside the interval, padded against
  // round-off so the bound stays conservative.
  out.x0 = std::max(0, static_cast<int>(std::ceil(x_lo - 0.5 - 1e-6)));
  out.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(x_hi - 0.5 + 1e-6)));
  out.y0 = std::max(0, static_cast<int>(std::ceil(y_lo - 0.5 - 1e-6)));
  out.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(y_hi - 0.5 + 1e-6)));
  return out.x0 <= out.x1 && out.y0 <= out.y1;
}

}  // namespace detail

PixelSample composite_pixel(const Ray& ray, const SplatSet& splats) {
  const auto prepared = prepare_all(splats);
  std::vector<detail::RawHit> hits;
  for (int32_t i = 0; i < static_cast<int32_t>(prepared.size()); ++i) {
    if (auto h = intersect_ray_splat(ray, prepared[i])) {
      hits.push_back({i, h->u, h->v, h->depth, h->gvalue});
    }
  }
  sort_hits(hits);

  PixelSample sample;
  const PixelOut out = composite_hits(hits, prepared, sample.contribs);
  sample.color = out.color;
  sample.depth = out.depth;
  sample.normal = out.normal;
  sample.acc = out.acc;
  return sample;
}

RenderBuffers render_view(const Camera& cam, const SplatSet& splats,
                          const RenderOptions& opts) {
  cam.validate();
  validate_splats(splats);

  const int w = cam.width, h = cam.height;
  RenderBuffers buf;
  buf.width = w;
  buf.height = h;
  buf.color = Image3(w, h);
  buf.depth = Image1(w, h);
  buf.normal = Image3(w, h);
  buf.acc = Image1(w, h);

  const auto prepared = prepare_all(splats);

  struct RowEntry {
    int32_t splat;
    int x0, x1;
  };
  std::vector<std::vector<RowEntry>> rows(h);
  for (int32_t i = 0; i < static_cast<int32_t>(prepared.size()); ++i) {
    detail::PixelRect rect;
    if (!detail::project_bbox(cam, prepared[i], rect)) continue;
    for (int y = rect.y0; y <= rect.y1; ++y) {
      rows[y].push_back({i, rect.x0, rect.x1});
    }
  }

  const int threads = resolve_threads(opts.threads);
  std::vector<int32_t> counts(static_cast<size_t>(w) * h, 0);
  std::vector<std::vector<ContribRecord>> thread_contribs(threads);
  std::vector<int> thread_row_begin(threads, 0);

  parallel_ranges(h, threads, [&](int t, int y0, int y1) {
    auto& local = thread_contribs[t];
    thread_row_begin[t] = y0;
    std::vector<detail::RawHit> hits;
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const Ray ray = ray_through_pixel(cam, Vec2(x + 0.5, y + 0.5));
        hits.clear();
        for (const RowEntry& e : rows[y]) {
          if (x < e.x0 || x > e.x1) continue;
          if (auto hit = intersect_ray_splat(ray, prepared[e.splat])) {
            hits.push_back({e.splat, hit->u, hit->v, hit->depth, hit->gvalue});
          }
        }
        sort_hits(hits);
        const size_t before = local.size();
        const PixelOut out = composite_hits(hits, prepared, local);
        counts[static_cast<size_t>(y) * w + x] =
            static_cast<int32_t>(local.size() - before);
        for (int c = 0; c < 3; ++c) {
          buf.color.at(x, y, c) = out.color[c];
          buf.normal.at(x, y, c) = out.normal[c];
        }
        buf.depth.at(x, y) = out.depth;
        buf.acc.at(x, y) = out.acc;
      }
    }
  });

  buf.offsets.resize(static_cast<size_t>(w) * h + 1, 0);
  for (size_t p = 0; p < counts.size(); ++p) {
    buf.offsets[p + 1] = buf.offsets[p] + counts[p];
  }
  buf.contribs.resize(buf.offsets.back());
  for (int t = 0; t < threads; ++t) {
    if (thread_contribs[t].empty()) continue;
    const size_t dst = buf.offsets[static_cast<size_t>(thread_row_begin[t]) * w];
    std::copy(thread_contribs[t].begin(), thread_contribs[t].end(),
              buf.contribs.begin() + dst);
  }
  return buf;
}

SplatGrads render_backward(const Camera& cam, const SplatSet& splats,
                           const RenderBuffers& buffers,
                           const RenderAdjoints& adjoints,
                           const RenderOptions& opts) {
  const int w = buffers.width, h = buffers.height;
  const size_t n = splats.size();
  const size_t n_contribs = buffers.contribs.size();

  if (!adjoints.d_color.empty() &&
      (adjoints.d_color.width() != w || adjoints.d_color.height() != h)) {
    throw DimensionMismatchError("color adjoint does not match render size");
  }
  if (!adjoints.d_depth.empty() &&
      (adjoints.d_depth.width() != w || adjoints.d_depth.height() != h)) {
    throw DimensionMismatchError("depth adjoint does not match render size");
  }
  if (!adjoints.d_omega.empty() && adjoints.d_omega.size() != n_contribs) {
    throw DimensionMismatchError("omega adjoint does not match contribution count");
  }
  if (!adjoints.d_contrib_depth.empty() &&
      adjoints.d_contrib_depth.size() != n_contribs) {
    throw DimensionMismatchError("contribution depth adjoint size mismatch");
  }
  if (!adjoints.d_splat_normal.empty() && adjoints.d_splat_normal.size() != n) {
    throw DimensionMismatchError("splat normal adjoint size mismatch");
  }

  const auto prepared = prepare_all(splats);

  struct Accum {
    Vec3 d_center = Vec3::Zero();
    Mat3 d_frame = Mat3::Zero();
    double d_ls[2] = {0, 0};
    double d_logit = 0;
    Vec3 d_color = Vec3::Zero();
  };

  const int threads = resolve_threads(opts.threads);
  std::vector<std::vector<Accum>> partials(threads);

  parallel_ranges(h, threads, [&](int t, int y0, int y1) {
    auto& acc = partials[t];
    acc.resize(n);
    std::vector<double> g_omega, g_dep;
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t p = static_cast<size_t>(y) * w + x;
        const int32_t begin = buffers.offsets[p], end = buffers.offsets[p + 1];
        if (begin == end) continue;
        const int k = end - begin;

        const double w_acc = buffers.acc.at(x, y);
        const double d_hat = buffers.depth.at(x, y);
        const double denom = w_acc + kDepthDenomEps;
        Vec3 g_color = Vec3::Zero();
        double g_depth_px = 0;
        if (!adjoints.d_color.empty()) {
          g_color = Vec3(adjoints.d_color.at(x, y, 0), adjoints.d_color.at(x, y, 1),
                         adjoints.d_color.at(x, y, 2));
        }
        if (!adjoints.d_depth.empty()) g_depth_px = adjoints.d_depth.at(x, y);

        g_omega.assign(k, 0.0);
        g_dep.assign(k, 0.0);
        for (int i = 0; i < k; ++i) {
          const ContribRecord& c = buffers.contribs[begin + i];
          g_omega[i] = g_color.dot(prepared[c.splat].color) +
                       g_depth_px * (c.depth - d_hat) / denom;
          g_dep[i] = g_depth_px * c.omega / denom;
          if (!adjoints.d_omega.empty()) g_omega[i] += adjoints.d_omega[begin + i];
          if (!adjoints.d_contrib_depth.empty()) {
            g_dep[i] += adjoints.d_contrib_depth[begin + i];
          }
          acc[c.splat].d_color += c.omega * g_color;
        }

        const Ray ray = ray_through_pixel(cam, Vec2(x + 0.5, y + 0.5));
        double suffix = 0;  // sum over later terms of g_omega_j * omega_j
        for (int i = k - 1; i >= 0; --i) {
          const ContribRecord& c = buffers.contribs[begin + i];
          const PreparedSplat& s = prepared[c.splat];
          const double trans = c.omega / c.alpha;
          double g_alpha = g_omega[i] * trans;
          if (suffix != 0.0) {
            g_alpha -= suffix / std::max(1.0 - c.alpha, 1e-12);
          }
          suffix += g_omega[i] * c.omega;

          const double g_opacity = g_alpha * c.gvalue;
          const double g_g = g_alpha * s.opacity;
          acc[c.splat].d_logit += g_opacity * s.opacity * (1.0 - s.opacity);

          const double gu = g_g * (-c.u * c.gvalue);
          const double gv = g_g * (-c.v * c.gvalue);
          const SplatHit hit{c.u, c.v, c.depth, c.gvalue};
          intersect_backward(ray, s, hit, gu, gv, g_dep[i], Vec3::Zero(),
                             acc[c.splat].d_center, acc[c.splat].d_frame,
                             acc[c.splat].d_ls);
        }
      }
    }
  });

  SplatGrads grads(n);
  std::vector<Accum> total(n);
  for (int t = 0; t < threads; ++t) {
    if (partials[t].empty()) continue;
    for (size_t i = 0; i < n; ++i) {
      total[i].d_center += partials[t][i].d_center;
      total[i].d_frame += partials[t][i].d_frame;
      total[i].d_ls[0] += partials[t][i].d_ls[0];
      total[i].d_ls[1] += partials[t][i].d_ls[1];
      total[i].d_logit += partials[t][i].d_logit;
      total[i].d_color += partials[t][i].d_color;
    }
  }
  for (size_t i = 0; i < n; ++i) {
    if (!adjoints.d_splat_normal.empty()) {
      total[i].d_frame.col(2) += adjoints.d_splat_normal[i];
    }
    const Vec4 d_quat = rotation_gradient_to_quat(splats[i].rot, total[i].d_frame);
    SplatGrad& g = grads[i];
    for (int c = 0; c < 3; ++c) g[c] = total[i].d_center[c];
    for (int c = 0; c < 4; ++c) g[3 + c] = d_quat[c];
    g[7] = total[i].d_ls[0];
    g[8] = total[i].d_ls[1];
    g[9] = total[i].d_logit;
    for (int c = 0; c < 3; ++c) g[10 + c] = total[i].d_color[c];
  }
  return grads;
}

Image3 depth_to_normal(const Camera& cam, const Image1& depth, const Image1& acc,
                       GateHash* gate) {
  if (!depth.same_shape(acc)) {
    throw DimensionMismatchError("depth and coverage images differ in size");
  }
  const int w = depth.width(), h = depth.height();
  Image3 normal(w, h, 0.0);
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      const uint64_t p = static_cast<uint64_t>(y) * w + x;
      if (acc.at(x, y) < kCoverageEps || acc.at(x + 1, y) < kCoverageEps ||
          acc.at(x, y + 1) < kCoverageEps) {
        if (gate) gate->fold(p << 2 | 0);
        continue;
      }
      const Vec3 a = ray_through_pixel(cam, Vec2(x + 0.5, y + 0.5)).dir;
      const Vec3 b = ray_through_pixel(cam, Vec2(x + 1.5, y + 0.5)).dir;
      const Vec3 c = ray_through_pixel(cam, Vec2(x + 0.5, y + 1.5)).dir;
      const double d0 = depth.at(x, y);
      const Vec3 tx = depth.at(x + 1, y) * b - d0 * a;
      const Vec3 ty = depth.at(x, y + 1) * c - d0 * a;
      Vec3 cr = tx.cross(ty);
      const double norm = cr.norm();
      if (norm < 1e-12) {
        if (gate) gate->fold(p << 2 | 1);
        continue;
      }
      cr /= norm;
      const bool flipped = cr.dot(a) > 0;
      if (flipped) cr = -cr;  // orient against the viewing ray
      if (gate) gate->fold(p << 2 | (flipped ? 2 : 3));
      for (int ch = 0; ch < 3; ++ch) normal.at(x, y, ch) = cr[ch];
    }
  }
  return normal;
}

Image1 depth_to_normal_backward(const Camera& cam, const Image1& depth,
                                const Image1& acc, const Image3& d_normal) {
  if (!depth.same_shape(acc) || depth.width() != d_normal.width() ||
      depth.height() != d_normal.height()) {
    throw DimensionMismatchError("normal adjoint does not match depth size");
  }
  const int w = depth.width(), h = depth.height();
  Image1 d_depth(w, h, 0.0);
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      if (acc.at(x, y) < kCoverageEps || acc.at(x + 1, y) < kCoverageEps ||
          acc.at(x, y + 1) < kCoverageEps) {
        continue;
      }
      const Vec3 gn(d_normal.at(x, y, 0), d_normal.at(x, y, 1), d_normal.at(x, y, 2));
      if (gn.isZero(0.0)) continue;

      const Vec3 a = ray_through_pixel(cam, Vec2(x + 0.5, y + 0.5)).dir;
      const Vec3 b = ray_through_pixel(cam, Vec2(x + 1.5, y + 0.5)).dir;
      const Vec3 c = ray_through_pixel(cam, Vec2(x + 0.5, y + 1.5)).dir;
      const double d0 = depth.at(x, y);
      const Vec3 tx = depth.at(x + 1, y) * b - d0 * a;
      const Vec3 ty = depth.at(x, y + 1) * c - d0 * a;
      const Vec3 cr = tx.cross(ty);
      const double norm = cr.norm();
      if (norm < 1e-12) continue;
      const Vec3 unit = cr / norm;
      const double sign = unit.dot(a) > 0 ? -1.0 : 1.0;

      const Vec3 g_cr = sign * (gn - unit * unit.dot(gn)) / norm;
      const Vec3 g_tx = ty.cross(g_cr);
      const Vec3 g_ty = g_cr.cross(tx);
      d_depth.at(x + 1, y) += b.dot(g_tx);
      d_depth.at(x, y + 1) += c.dot(g_ty);
      d_depth.at(x, y) += -a.dot(g_tx + g_ty);
    }
  }
  return d_depth;
}

}  // namespace splatfit

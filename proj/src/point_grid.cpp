#include "splatfit/point_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace splatfit {

PointGrid::PointGrid(std::span<const Vec3> points, double cell)
    : points_(points.begin(), points.end()) {
  if (points_.empty()) throw EmptyPointSetError("point grid needs points");
  Vec3 lo = points_[0], hi = points_[0];
  for (const Vec3& p : points_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  grid_min_ = lo;
  const double diag = (hi - lo).norm();
  if (cell > 0) {
    cell_ = cell;
  } else if (diag > 0) {
    // aim for O(1) points per cell on roughly surface-distributed data
    const double n = static_cast<double>(points_.size());
    cell_ = diag / std::max(1.0, std::sqrt(n));
  } else {
    cell_ = 1.0;  // all points coincide; any positive size works
  }
  for (int a = 0; a < 3; ++a)
    box_hi_[a] = static_cast<int64_t>(std::floor((hi[a] - lo[a]) / cell_));
  cells_.reserve(points_.size());
  for (size_t i = 0; i < points_.size(); ++i) {
    int64_t ix, iy, iz;
    cell_of(points_[i], ix, iy, iz);
    cells_[key(ix, iy, iz)].push_back(static_cast<int>(i));
  }
}

void PointGrid::cell_of(const Vec3& p, int64_t& ix, int64_t& iy, int64_t& iz) const {
  ix = static_cast<int64_t>(std::floor((p.x() - grid_min_.x()) / cell_));
  iy = static_cast<int64_t>(std::floor((p.y() - grid_min_.y()) / cell_));
  iz = static_cast<int64_t>(std::floor((p.z() - grid_min_.z()) / cell_));
}

uint64_t PointGrid::key(int64_t ix, int64_t iy, int64_t iz) const {
  // queries may fall outside the point bounds; bias keeps coordinates positive
  const uint64_t bias = 1u << 20;
  return ((static_cast<uint64_t>(ix + bias) & 0x1FFFFF) << 42) |
         ((static_cast<uint64_t>(iy + bias) & 0x1FFFFF) << 21) |
         (static_cast<uint64_t>(iz + bias) & 0x1FFFFF);
}

PointGrid::Hit PointGrid::nearest(const Vec3& query, int64_t exclude) const {
  int64_t qx, qy, qz;
  cell_of(query, qx, qy, qz);
  Hit best{0, std::numeric_limits<double>::infinity()};
  const auto scan_cell = [&](int64_t ix, int64_t iy, int64_t iz) {
    const auto it = cells_.find(key(ix, iy, iz));
    if (it == cells_.end()) return;
    for (const int i : it->second) {
      if (i == exclude) continue;
      const double d = (points_[i] - query).norm();
      if (d < best.distance ||
          (d == best.distance && static_cast<size_t>(i) < best.index)) {
        best = {static_cast<size_t>(i), d};
      }
    }
  };

  // Only cells inside the populated box [0, box_hi_] can hold points, so
  // ring enumeration clamps to it; rings that miss the box entirely are
  // skipped by starting at the query-to-box Chebyshev distance.
  const int64_t q[3] = {qx, qy, qz};
  int64_t first = 0, last = 0;
  for (int a = 0; a < 3; ++a) {
    first = std::max({first, -q[a], q[a] - box_hi_[a]});
    last = std::max({last, q[a], box_hi_[a] - q[a]});
  }
  for (int64_t r = first; r <= last; ++r) {
    // any point in an unscanned in-box cell is at least (r-1)*cell away
    if (best.distance <= static_cast<double>(r - 1) * cell_) break;
    const int64_t xlo = std::max(qx - r, int64_t{0});
    const int64_t xhi = std::min(qx + r, box_hi_[0]);
    const int64_t ylo = std::max(qy - r, int64_t{0});
    const int64_t yhi = std::min(qy + r, box_hi_[1]);
    const int64_t zlo = std::max(qz - r, int64_t{0});
    const int64_t zhi = std::min(qz + r, box_hi_[2]);
    for (int64_t ix = xlo; ix <= xhi; ++ix) {
      const bool face_x = ix == qx - r || ix == qx + r;
      for (int64_t iy = ylo; iy <= yhi; ++iy) {
        if (face_x || iy == qy - r || iy == qy + r) {
          for (int64_t iz = zlo; iz <= zhi; ++iz) scan_cell(ix, iy, iz);
        } else {
          if (qz - r >= 0 && qz - r <= box_hi_[2]) scan_cell(ix, iy, qz - r);
          if (qz + r >= 0 && qz + r <= box_hi_[2]) scan_cell(ix, iy, qz + r);
        }
      }
    }
  }
  return best;
}

}  // namespace splatfit

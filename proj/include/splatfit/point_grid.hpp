#pragma once
// Uniform hash grid for exact nearest-neighbor queries over a fixed point set.

#include <span>
#include <unordered_map>
#include <vector>

#include "splatfit/errors.hpp"
#include "splatfit/types.hpp"

namespace splatfit {

class PointGrid {
 public:
  // Cell size ≤ 0 picks a density-based default. Throws EmptyPointSetError.
  explicit PointGrid(std::span<const Vec3> points, double cell = 0.0);

  struct Hit {
    size_t index;
    double distance;
  };
  // Exact: expands cell rings until the best candidate provably wins.
  // `exclude` skips one point index (for self-queries from the stored set).
  Hit nearest(const Vec3& query, int64_t exclude = -1) const;

  size_t size() const { return points_.size(); }
  const Vec3& point(size_t i) const { return points_[i]; }

 private:
  uint64_t key(int64_t ix, int64_t iy, int64_t iz) const;
  void cell_of(const Vec3& p, int64_t& ix, int64_t& iy, int64_t& iz) const;

  std::vector<Vec3> points_;
  Vec3 grid_min_;
  double cell_ = 1.0;
  int64_t box_hi_[3] = {0, 0, 0};  // populated cell range is [0, box_hi_]
  std::unordered_map<uint64_t, std::vector<int>> cells_;
};

}  // namespace splatfit

#pragma once

#include <array>
#include <vector>

#include "splatfit/errors.hpp"
#include "splatfit/types.hpp"

namespace splatfit {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

// Throws InvalidSpecError on out-of-range indices or non-finite vertices.
void validate_mesh(const TriangleMesh& mesh);

}  // namespace splatfit

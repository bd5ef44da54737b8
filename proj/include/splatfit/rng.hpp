#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace splatfit {

// FNV-1a 64-bit hash.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// Derives an independent stream seed from (root seed, purpose label).
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose) {
  uint64_t h = fnv1a64(&seed, sizeof(seed));
  return fnv1a64(purpose, h);
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed, std::string_view purpose) {
  return Rng(derive_seed(seed, purpose));
}

// Rolling hash of every discrete decision taken while evaluating a
// differentiable pipeline. Two evaluations with equal hashes went through the
// same branches, so their outputs are locally smooth in the parameters; the
// gradient checker uses this to exclude finite-difference probes that step
// across a discontinuity.
//
// `h` collects jump gates: branches whose flip discontinuously changes the
// value (hit sequences, alpha/transmittance skips, skipped pairs, sign and
// orientation states). The surroundings of these gates also tend to be stiff
// (exponential tails, renormalization chains), so the checker additionally
// keeps a safety margin around them. `soft` collects selection gates that
// merely swap which smooth bounded term is evaluated (visibility bits,
// bilinear cells): the value is continuous across them, so only a stencil
// that straddles one is invalid and no margin is needed.
struct GateHash {
  uint64_t h = 0xcbf29ce484222325ull;
  uint64_t soft = 0xcbf29ce484222325ull;
  void fold(uint64_t v) { h = fnv1a64(&v, sizeof(v), h); }
  void fold_soft(uint64_t v) { soft = fnv1a64(&v, sizeof(v), soft); }
};

}  // namespace splatfit

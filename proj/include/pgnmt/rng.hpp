#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace pgnmt {

// std::mt19937_64 is used strictly as a raw 64-bit source. All shaping of
// draws (uniforms, normals, shuffles, bounded ints) is done by hand because
// the std distribution templates are implementation-defined and would break
// bit-level determinism across standard libraries.
using Rng = std::mt19937_64;

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

// splitmix64 finalizer; used to derive independent streams from (seed, tag).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
  std::uint64_t h = mix64(seed);
  for (char c : tag) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  return mix64(h ^ index);
}

// Uniform in [0, 1) with 53 bits of mantissa.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Unbiased draw from {0, ..., n-1} by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Box-Muller, one value per call (the sine half is discarded so every call
// consumes exactly two raw draws).
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace pgnmt

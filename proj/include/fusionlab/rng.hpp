// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fusionlab {

// Deterministic RNG used everywhere in the project. mt19937_64 itself is
// specified bit-exactly by the standard; the transforms below are our own
// because the std <random> distributions are implementation-defined and
// would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Independent stream derived from (seed, stream) via splitmix64 mixing.
  static Rng for_stream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(mix(seed + 0x9e3779b97f4a7c15ull * (stream + 1)));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double next_double() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n); unbiased via rejection. n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next_below(n));
  }

  // Box-Muller with cached spare.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer.
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace fusionlab

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rgbdmae/common.hpp"

namespace rgbdmae {

// SplitMix64. Hand-rolled so streams are bitwise reproducible across
// platforms and standard libraries (std:: distributions are not).
class Rng {
 public:
  explicit Rng(u64 seed) : state_(seed) {}

  u64 next_u64() {
    u64 z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  u64 below(u64 n) {
    u64 threshold = (0ULL - n) % n;
    for (;;) {
      u64 r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  i64 range(i64 lo, i64 hi_exclusive) { return lo + static_cast<i64>(below(static_cast<u64>(hi_exclusive - lo))); }

  // Box-Muller; consumes two uniforms per call, no cached state.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (i64 i = static_cast<i64>(v.size()) - 1; i > 0; --i) {
      i64 j = range(0, i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  // uniform subset of size k from [0, n), returned sorted
  std::vector<i64> choose(i64 n, i64 k) {
    std::vector<i64> idx(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    // partial Fisher-Yates: first k entries are a uniform k-subset
    for (i64 i = 0; i < k; ++i) {
      i64 j = range(i, n);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
  }

 private:
  u64 state_;
};

// Deterministic seed derivation for sub-streams (per-step masks, per-epoch
// shuffles, per-modality draws). Stateless: resume needs only the step index.
inline u64 mix_seed(u64 a, u64 b) {
  u64 z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline u64 mix_seed(u64 a, u64 b, u64 c) { return mix_seed(mix_seed(a, b), c); }

}  // namespace rgbdmae

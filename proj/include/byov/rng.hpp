#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace byov {

// SplitMix64 finalizer. All randomness in this project is counter-based:
// a draw is a pure function of (key, counter), so independent streams can
// never perturb each other and every run replays bit-identically.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_pair(uint64_t a, uint64_t b) {
  return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

/// Derive a stream key from a seed and a label ("eps", "aug", ...).
inline uint64_t derive_key(uint64_t seed, std::string_view stream) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_pair(mix64(seed), h);
}

inline uint64_t derive_key(uint64_t seed, std::string_view stream, uint64_t index) {
  return mix_pair(derive_key(seed, stream), index);
}

// Stateless generator: draw i depends only on (key, i).
class CounterRng {
 public:
  explicit CounterRng(uint64_t key) : key_(key) {}

  uint64_t bits(uint64_t i) const { return mix_pair(key_, i); }

  /// Uniform in (0, 1]: zero is excluded so log(u) is always finite.
  double uniform(uint64_t i) const {
    return static_cast<double>((bits(i) >> 11) + 1) * 0x1p-53;
  }

  /// Standard normal via Box-Muller; draw i consumes counters 2i and 2i+1.
  double normal(uint64_t i) const {
    const double u1 = uniform(2 * i);
    const double u2 = uniform(2 * i + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

 private:
  uint64_t key_;
};

// Sequential convenience wrapper over CounterRng.
class RngStream {
 public:
  explicit RngStream(uint64_t key) : rng_(key) {}

  uint64_t bits() { return rng_.bits(n_++); }
  double uniform() { return rng_.uniform(n_++); }
  double normal() { return rng_.normal(n_++); }

  /// Truncated normal: standard draws rejected outside ±cut, then scaled.
  double trunc_normal(double stddev, double cut = 2.0) {
    for (;;) {
      const double z = normal();
      if (std::fabs(z) <= cut) return stddev * z;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = bits() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  CounterRng rng_;
  uint64_t n_ = 0;
};

}  // namespace byov

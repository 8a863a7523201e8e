#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <vector>

#include "revit/errors.hpp"

namespace revit {

// Every random choice in the project flows from one master seed through
// the primitives below. The exact conventions are load-bearing: golden
// tests freeze their outputs, and reports must be byte-identical across
// runs. Do not change any constant or draw order.
//
//   splitmix64 step : state += 0x9E3779B97F4A7C15; z = state;
//                     z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//                     z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
//   fnv1a64         : basis 0xcbf29ce484222325, prime 0x100000001b3
//   child seed      : one splitmix64 output from state (master ^ fnv1a64(label))
//   bounded(n)      : rejection sampling, t = (2^64 - n) % n; retry while r < t
//   fisher_yates    : i = n-1 .. 1, j = bounded(i+1), swap(a[i], a[j])

inline constexpr std::uint64_t kSplitMix64Gamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : s) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += kSplitMix64Gamma;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Unbiased draw in [0, n).
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw ConfigError("bounded: n must be positive");
    const std::uint64_t t = (0ULL - n) % n;
    std::uint64_t r = next();
    while (r < t) r = next();
    return r % n;
  }

  // Uniform in (0, 1]; 53 mantissa bits.
  double uniform01() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  // Box-Muller, two draws per sample (no caching so draw counts stay obvious).
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Standard normal conditioned on |z| <= cut, by resampling.
  double truncated_normal(double cut) {
    double z = normal();
    while (std::abs(z) > cut) z = normal();
    return z;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Deterministic per-purpose seed; labels are free-form strings like
// "key/3" or "train/key=2/shuffle/epoch=17".
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  return SplitMix64(master ^ fnv1a64(label)).next();
}

inline SplitMix64 derive_stream(std::uint64_t master, std::string_view label) {
  return SplitMix64(derive_seed(master, label));
}

// In-place Fisher-Yates over the whole vector.
template <typename T>
void fisher_yates(SplitMix64& rng, std::vector<T>& a) {
  for (std::size_t i = a.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.bounded(i));
    std::swap(a[i - 1], a[j]);
  }
}

inline std::vector<int> random_permutation(SplitMix64& rng, int n) {
  std::vector<int> a(static_cast<std::size_t>(n));
  std::iota(a.begin(), a.end(), 0);
  fisher_yates(rng, a);
  return a;
}

}  // namespace revit

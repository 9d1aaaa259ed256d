#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "msd/vec2.hpp"

namespace msd {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of stream (a, b) under `seed`. Streams depend only on their
/// coordinates, so work can be scheduled in any order.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) : engine_(stream_seed(seed, a, b)) {}

  double normal() { return normal_(engine_); }
  Vec2 normal2() {
    const double x = normal();
    return {x, normal()};
  }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// n standard normal pairs from a randomly shifted rank-1 lattice through Box-Muller.
inline std::vector<Vec2> lattice_normals(std::size_t n, std::uint64_t seed) {
  std::vector<Vec2> out;
  out.reserve(n);
  Rng rng(seed);
  const double shift_a = rng.uniform(), shift_b = rng.uniform();
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double a = static_cast<double>(i) / static_cast<double>(n) + shift_a;
    double b = static_cast<double>(i) * golden + shift_b;
    a -= std::floor(a);
    b -= std::floor(b);
    const double r = std::sqrt(-2.0 * std::log1p(-a));
    const double phi = 2.0 * std::numbers::pi * b;
    out.push_back({r * std::cos(phi), r * std::sin(phi)});
  }
  return out;
}

}  // namespace msd

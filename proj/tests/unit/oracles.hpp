#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "msd/denoiser.hpp"
#include "msd/vec2.hpp"

namespace msd::test {

/// Posterior mean for isotropic Gaussian data N(mean, sd^2 I).
class GaussianPosterior final : public Denoiser {
 public:
  GaussianPosterior(Vec2 mean, double sd) : mean_(mean), var_(sd * sd) {}
  Vec2 denoise(const Vec2& z, double sigma, ClassIndex) const override {
    return mean_ + (var_ / (var_ + sigma * sigma)) * (z - mean_);
  }
  bool conditional() const override { return false; }

 private:
  Vec2 mean_;
  double var_;
};

/// Class-conditional stand-in returning a fixed output per class.
class ConstantPerClass final : public Denoiser {
 public:
  ConstantPerClass(Vec2 uncond, Vec2 cond) : uncond_(uncond), cond_(cond) {}
  Vec2 denoise(const Vec2&, double, ClassIndex cls) const override { return cls ? cond_ : uncond_; }
  bool conditional() const override { return true; }

 private:
  Vec2 uncond_, cond_;
};

/// Softmax-weighted mean accumulated in long double with two passes.
inline Vec2 softmax_mean_oracle(std::span<const Vec2> pts, const Vec2& z, double sigma) {
  long double best = -INFINITY;
  for (const auto& p : pts) best = std::max(best, -static_cast<long double>(norm2(z - p)) / (2.0L * sigma * sigma));
  long double w = 0, sx = 0, sy = 0;
  for (const auto& p : pts) {
    const long double e = std::exp(-static_cast<long double>(norm2(z - p)) / (2.0L * sigma * sigma) - best);
    w += e;
    sx += e * p.x;
    sy += e * p.y;
  }
  return {static_cast<double>(sx / w), static_cast<double>(sy / w)};
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  s /= static_cast<double>(v.size() - 1);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace msd::test

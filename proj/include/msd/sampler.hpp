#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "msd/denoiser.hpp"
#include "msd/schedule.hpp"

namespace msd {

/// How the kernel G_lambda(x - y) enters the probability-flow ODE.
enum class KernelForm {
  /// Kernel score evaluated for the noised product density: the product
  /// denoiser is D(c; tau) with c = (s^2 x + l^2 z) / (l^2 + s^2),
  /// tau^2 = l^2 s^2 / (l^2 + s^2), l^2 = lambda^2 / 2. Exact in the
  /// continuous-time limit.
  noised,
  /// Clean kernel score 2 (x - z) / lambda^2 added at every noise level.
  fixed,
};
std::string_view to_string(KernelForm form);
KernelForm parse_kernel_form(std::string_view name);

/// Where the stable sampler contracts toward at each level.
enum class AnchorMode {
  point,      ///< the anchor x itself
  inversion,  ///< the DDIM-inversion trajectory of x
};
std::string_view to_string(AnchorMode mode);
AnchorMode parse_anchor_mode(std::string_view name);

struct KernelGuide {
  Vec2 anchor;
  double lambda = 0.3;
  std::size_t k_lo = 0;  ///< kernel applies at schedule indices k_lo..k_hi
  std::size_t k_hi = 0;
  KernelForm form = KernelForm::noised;
  AnchorMode anchor_mode = AnchorMode::point;
  /// Shift the initial latent by alpha_T * anchor, so the chain starts around the kernel centre.
  bool centre_prior = false;

  void validate(const NoiseSchedule& schedule) const;
  bool active(std::size_t step) const { return step >= k_lo && step <= k_hi; }
};

/// Defaults per form: noised uses every level and the point anchor; fixed
/// uses the least noisy 60% of levels and inversion anchors.
KernelGuide default_guide(const Vec2& anchor, double lambda, const NoiseSchedule& schedule,
                          KernelForm form = KernelForm::noised);

/// Latents indexed by level: states[0] is the clean end, states[k + 1] sits at schedule index k.
struct Trajectory {
  std::vector<Vec2> states;
  std::int64_t cost = 0;

  const Vec2& clean() const { return states.front(); }
  const Vec2& at(std::size_t index) const { return states.at(index + 1); }
};

struct SampleResult {
  Vec2 sample;
  std::int64_t cost = 0;
};

/// One deterministic DDIM update from schedule index `step` to `step - 1`;
/// step 0 maps to the clean endpoint.
Vec2 ddim_step(const Vec2& z, const Vec2& eps, const NoiseSchedule& schedule, std::size_t step);

/// Initial latent for `seed`: N(0, sigma_max^2 I) (VE) or N(0, I) (VP).
Vec2 initial_latent(const NoiseSchedule& schedule, std::uint64_t seed);

/// How a batch of initial latents is drawn.
enum class NoiseDraw {
  iid,      ///< independent streams stream_seed(seed, i)
  lattice,  ///< randomly shifted rank-1 lattice through Box-Muller; each point is marginally Gaussian
};
std::string_view to_string(NoiseDraw d);
NoiseDraw parse_noise_draw(std::string_view name);

std::vector<Vec2> initial_latents(const NoiseSchedule& schedule, std::size_t n, std::uint64_t seed, NoiseDraw draw);

Trajectory ddim_chain(const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                      const Vec2& z_top, ClassIndex cls = std::nullopt);
SampleResult ddim_sample(const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                         std::uint64_t seed, ClassIndex cls = std::nullopt);

/// DDIM recurrence run upward from z = x; throws DivergedInversion on a non-finite state.
Trajectory ddim_invert(const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                       const Vec2& x, ClassIndex cls = std::nullopt);

/// Explicit kernel-guided DDIM. Throws IntegratorInstability when the chain leaves
/// the finite range or grows beyond 1e6 times the problem scale.
Trajectory product_chain_naive(const Denoiser& denoiser, const GuidanceConfig& guidance,
                               const NoiseSchedule& schedule, const KernelGuide& guide, const Vec2& z_top,
                               ClassIndex cls = std::nullopt);
SampleResult product_sample_naive(const Denoiser& denoiser, const GuidanceConfig& guidance,
                                  const NoiseSchedule& schedule, const KernelGuide& guide, std::uint64_t seed,
                                  ClassIndex cls = std::nullopt);

/// Split kernel-guided DDIM: an exact contraction toward the anchor over each
/// interval, with the data step scaled by the contraction over its second half. `anchors` may carry a precomputed inversion of guide.anchor, whose
/// cost is then not charged again.
Trajectory product_chain_stable(const Denoiser& denoiser, const GuidanceConfig& guidance,
                                const NoiseSchedule& schedule, const KernelGuide& guide, const Vec2& z_top,
                                ClassIndex cls = std::nullopt, const Trajectory* anchors = nullptr);
SampleResult product_sample_stable(const Denoiser& denoiser, const GuidanceConfig& guidance,
                                   const NoiseSchedule& schedule, const KernelGuide& guide, std::uint64_t seed,
                                   ClassIndex cls = std::nullopt, const Trajectory* anchors = nullptr);

/// CSV with columns step,z_x,z_y; step counts levels from the clean end.
void write_trajectory_csv(std::ostream& os, const Trajectory& t);

}  // namespace msd

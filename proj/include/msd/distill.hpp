#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "msd/sampler.hpp"

namespace msd {

/// Monte Carlo gradient estimate and its cost in denoiser invocations.
/// SDS/SDI report the loss gradient (descend along it); MSD reports the
/// mean-shift vector (ascend along it). See ascent_direction().
struct GradientEstimate {
  Vec2 grad;
  std::int64_t cost = 0;
  int mc_samples = 0;
};

enum class Method { sds, sdi, msd };
std::string_view to_string(Method m);
Method parse_method(std::string_view name);

/// Direction in which the point should move to increase density.
Vec2 ascent_direction(Method m, const Vec2& grad);

/// Everything an estimator needs besides the point and the seed.
struct EstimatorContext {
  const Denoiser& denoiser;
  const GuidanceConfig& guidance;
  const NoiseSchedule& schedule;
  ClassIndex cls = std::nullopt;
};

/// Noise-prediction residual averaged over n_mc draws of a uniform schedule
/// index and fresh Gaussian noise, weighted by alpha(t).
GradientEstimate sds_gradient(const EstimatorContext& ctx, const Vec2& x, int n_mc, std::uint64_t seed);

/// As sds_gradient, with the noise implied by the DDIM inversion of x at the drawn level.
GradientEstimate sdi_gradient(const EstimatorContext& ctx, const Vec2& x, int n_mc, std::uint64_t seed);

/// default_guide with the product chain started around the anchor.
KernelGuide msd_guide(const Vec2& anchor, double lambda, const NoiseSchedule& schedule,
                      KernelForm form = KernelForm::noised);

/// Mean of n_mc product samples minus x; stable selects the split sampler.
GradientEstimate msd_gradient(const EstimatorContext& ctx, const KernelGuide& guide, int n_mc, std::uint64_t seed,
                              bool stable, NoiseDraw draw = NoiseDraw::lattice);

struct DistillState {
  Vec2 theta;
  std::int64_t step = 0;
  Vec2 adam_m;
  Vec2 adam_v;
  double lambda = 0.0;
  std::uint64_t rng_seed = 0;
};

struct AdamConfig {
  double lr = 0.08;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

/// Bias-corrected Adam descent step on theta.
DistillState adam_step(DistillState state, const Vec2& grad, const AdamConfig& cfg);

enum class AnnealMode { linear, none };
std::string_view to_string(AnnealMode m);
AnnealMode parse_anneal_mode(std::string_view name);

struct BandwidthSchedule {
  double lambda0 = 0.316;
  double lambda_min = 0.03;
  std::int64_t total_steps = 150;
  AnnealMode mode = AnnealMode::linear;

  void validate() const;
};

struct AnnealResult {
  double lambda;
  bool terminated;
};

/// Linear decay from lambda0 (k = 0) to lambda_min (k = total_steps); terminated once k >= total_steps.
AnnealResult anneal(const BandwidthSchedule& schedule, std::int64_t k);

struct DistillConfig {
  Method method = Method::msd;
  std::int64_t iterations = 150;
  AdamConfig adam;
  BandwidthSchedule bandwidth;
  int n_mc = 1;
  bool stable = false;  ///< MSD: split sampler instead of the explicit one
  KernelForm kernel_form = KernelForm::noised;
  NoiseDraw noise_draw = NoiseDraw::lattice;
  ClassIndex cls = std::nullopt;
  bool record_trace = true;
};

struct TraceRow {
  std::uint32_t point_id;
  std::int64_t iter;
  Vec2 theta;
  double grad_norm;
  double lambda;
  std::int64_t cumulative_cost;
};

struct DistillResult {
  std::vector<Vec2> finals;
  std::vector<std::int64_t> iterations_run;  ///< optimizer steps taken per point
  std::vector<std::int64_t> costs;           ///< total denoiser invocations per point
  std::vector<TraceRow> trace;               ///< ordered by point, then iteration
};

/// One optimization of a single point; the gradient seed at iteration k is stream_seed(seed, point_id, k).
DistillResult distill_point(const DistillConfig& cfg, const EstimatorContext& ctx, const Vec2& init,
                            std::uint32_t point_id, std::uint64_t seed);

/// Independent optimizations for every initial point, spread over `threads` workers.
DistillResult distill_run(const DistillConfig& cfg, const EstimatorContext& ctx, std::span<const Vec2> init_points,
                          std::uint64_t seed, int threads = 1);

/// n x n cell-centred grid over [lo, hi]^2, row-major with x fastest.
std::vector<Vec2> make_grid(double lo, double hi, int n);

void write_trace_csv(std::ostream& os, const DistillResult& r);
void write_points_csv(std::ostream& os, std::span<const Vec2> points);
/// Inverse of write_points_csv; throws FormatError on a malformed row.
std::vector<Vec2> read_points_csv(std::istream& is);

/// Estimator bound to a method and its settings, returning ascent directions.
using AscentEstimator = std::function<GradientEstimate(const Vec2& x, std::uint64_t seed)>;
AscentEstimator make_ascent_estimator(Method method, const EstimatorContext& ctx, double lambda, int n_mc,
                                      bool stable = false, KernelForm form = KernelForm::noised,
                                      NoiseDraw draw = NoiseDraw::lattice);

}  // namespace msd

#include "msd/distill.hpp"
#include "msd/format.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <stdexcept>

#include "msd/error.hpp"
#include "msd/parallel.hpp"
#include "msd/rng.hpp"

namespace msd {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::sds: return "sds";
    case Method::sdi: return "sdi";
    case Method::msd: return "msd";
  }
  return "msd";
}

Method parse_method(std::string_view name) {
  if (name == "sds") return Method::sds;
  if (name == "sdi") return Method::sdi;
  if (name == "msd") return Method::msd;
  throw std::invalid_argument("unknown method: " + std::string(name));
}

Vec2 ascent_direction(Method m, const Vec2& grad) { return m == Method::msd ? grad : -grad; }

GradientEstimate sds_gradient(const EstimatorContext& ctx, const Vec2& x, int n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be >= 1");
  ctx.guidance.validate(ctx.denoiser);
  ModelCall call(ctx.denoiser, ctx.guidance);
  const std::size_t n = ctx.schedule.num_steps();
  Vec2 acc;
  for (int i = 0; i < n_mc; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    const NoiseLevel level = noise_at(ctx.schedule, rng.index(n));
    const Vec2 eps = rng.normal2();
    const Vec2 z = level.alpha * x + level.sigma * eps;
    acc += level.alpha * (call.eps(z, level, ctx.cls) - eps);
  }
  return {acc / static_cast<double>(n_mc), call.cost(), n_mc};
}

GradientEstimate sdi_gradient(const EstimatorContext& ctx, const Vec2& x, int n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be >= 1");
  const Trajectory inv = ddim_invert(ctx.denoiser, ctx.guidance, ctx.schedule, x, ctx.cls);
  ModelCall call(ctx.denoiser, ctx.guidance);
  const std::size_t n = ctx.schedule.num_steps();
  Vec2 acc;
  for (int i = 0; i < n_mc; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    const std::size_t k = rng.index(n);
    const NoiseLevel level = noise_at(ctx.schedule, k);
    const Vec2& z = inv.at(k);
    const Vec2 eps = (z - level.alpha * x) / level.sigma;
    acc += level.alpha * (call.eps(z, level, ctx.cls) - eps);
  }
  return {acc / static_cast<double>(n_mc), call.cost() + inv.cost, n_mc};
}

KernelGuide msd_guide(const Vec2& anchor, double lambda, const NoiseSchedule& schedule, KernelForm form) {
  KernelGuide g = default_guide(anchor, lambda, schedule, form);
  g.centre_prior = true;
  return g;
}

GradientEstimate msd_gradient(const EstimatorContext& ctx, const KernelGuide& guide, int n_mc, std::uint64_t seed,
                              bool stable, NoiseDraw draw) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be >= 1");
  guide.validate(ctx.schedule);
  Trajectory inv;
  const Trajectory* anchors = nullptr;
  std::int64_t cost = 0;
  if (stable && guide.anchor_mode == AnchorMode::inversion) {
    inv = ddim_invert(ctx.denoiser, ctx.guidance, ctx.schedule, guide.anchor, ctx.cls);
    anchors = &inv;
    cost += inv.cost;
  }
  Vec2 acc;
  const auto starts = initial_latents(ctx.schedule, static_cast<std::size_t>(n_mc), seed, draw);
  for (const Vec2& z_top : starts) {
    const Trajectory t =
        stable ? product_chain_stable(ctx.denoiser, ctx.guidance, ctx.schedule, guide, z_top, ctx.cls, anchors)
               : product_chain_naive(ctx.denoiser, ctx.guidance, ctx.schedule, guide, z_top, ctx.cls);
    acc += t.clean();
    cost += t.cost;
  }
  return {acc / static_cast<double>(n_mc) - guide.anchor, cost, n_mc};
}

DistillState adam_step(DistillState s, const Vec2& g, const AdamConfig& cfg) {
  if (!is_finite(g)) throw NumericalError("non-finite gradient passed to Adam");
  s.step += 1;
  s.adam_m = cfg.beta1 * s.adam_m + (1.0 - cfg.beta1) * g;
  s.adam_v = cfg.beta2 * s.adam_v + (1.0 - cfg.beta2) * Vec2{g.x * g.x, g.y * g.y};
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  const Vec2 m_hat = s.adam_m / c1;
  const Vec2 v_hat = s.adam_v / c2;
  s.theta.x -= cfg.lr * m_hat.x / (std::sqrt(v_hat.x) + cfg.eps_hat);
  s.theta.y -= cfg.lr * m_hat.y / (std::sqrt(v_hat.y) + cfg.eps_hat);
  return s;
}

std::string_view to_string(AnnealMode m) { return m == AnnealMode::linear ? "linear" : "none"; }

AnnealMode parse_anneal_mode(std::string_view name) {
  if (name == "linear") return AnnealMode::linear;
  if (name == "none") return AnnealMode::none;
  throw std::invalid_argument("unknown anneal mode: " + std::string(name));
}

void BandwidthSchedule::validate() const {
  if (!(lambda_min > 0.0) || !(lambda_min < lambda0)) throw std::invalid_argument("require 0 < lambda_min < lambda0");
  if (total_steps < 1) throw std::invalid_argument("bandwidth total_steps must be >= 1");
}

AnnealResult anneal(const BandwidthSchedule& s, std::int64_t k) {
  s.validate();
  if (k < 0) throw std::invalid_argument("anneal step must be >= 0");
  if (s.mode == AnnealMode::none) return {s.lambda0, false};
  if (k >= s.total_steps) return {s.lambda_min, true};
  const double frac = static_cast<double>(k) / static_cast<double>(s.total_steps);
  return {s.lambda0 + (s.lambda_min - s.lambda0) * frac, false};
}

namespace {

GradientEstimate estimate(const DistillConfig& cfg, const EstimatorContext& ctx, const Vec2& x, double lambda,
                          std::uint64_t seed) {
  switch (cfg.method) {
    case Method::sds: return sds_gradient(ctx, x, cfg.n_mc, seed);
    case Method::sdi: return sdi_gradient(ctx, x, cfg.n_mc, seed);
    case Method::msd: {
      const KernelGuide guide = msd_guide(x, lambda, ctx.schedule, cfg.kernel_form);
      return msd_gradient(ctx, guide, cfg.n_mc, seed, cfg.stable, cfg.noise_draw);
    }
  }
  throw std::logic_error("unhandled method");
}

}  // namespace

DistillResult distill_point(const DistillConfig& cfg, const EstimatorContext& ctx, const Vec2& init,
                            std::uint32_t point_id, std::uint64_t seed) {
  if (cfg.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (cfg.method == Method::msd) cfg.bandwidth.validate();
  DistillResult r;
  DistillState state;
  state.theta = init;
  state.rng_seed = seed;
  std::int64_t cumulative = 0;
  std::int64_t k = 0;
  for (; k < cfg.iterations; ++k) {
    double lambda = 0.0;
    if (cfg.method == Method::msd) {
      const AnnealResult a = anneal(cfg.bandwidth, k);
      if (a.terminated) break;
      lambda = a.lambda;
    }
    state.lambda = lambda;
    const GradientEstimate g = estimate(cfg, ctx, state.theta, lambda, stream_seed(seed, point_id, k));
    cumulative += g.cost;
    state = adam_step(state, -ascent_direction(cfg.method, g.grad), cfg.adam);
    if (cfg.record_trace) r.trace.push_back({point_id, k, state.theta, norm(g.grad), lambda, cumulative});
  }
  r.finals.push_back(state.theta);
  r.iterations_run.push_back(k);
  r.costs.push_back(cumulative);
  return r;
}

DistillResult distill_run(const DistillConfig& cfg, const EstimatorContext& ctx, std::span<const Vec2> init_points,
                          std::uint64_t seed, int threads) {
  if (init_points.empty()) throw std::invalid_argument("distillation needs at least one initial point");
  std::vector<DistillResult> parts(init_points.size());
  parallel_for(init_points.size(), threads, [&](std::size_t i) {
    parts[i] = distill_point(cfg, ctx, init_points[i], static_cast<std::uint32_t>(i), seed);
  });
  DistillResult out;
  for (auto& p : parts) {
    out.finals.push_back(p.finals.front());
    out.iterations_run.push_back(p.iterations_run.front());
    out.costs.push_back(p.costs.front());
    out.trace.insert(out.trace.end(), p.trace.begin(), p.trace.end());
  }
  return out;
}

std::vector<Vec2> make_grid(double lo, double hi, int n) {
  if (n < 1 || !(lo < hi)) throw std::invalid_argument("grid needs n >= 1 and lo < hi");
  std::vector<Vec2> pts;
  pts.reserve(static_cast<std::size_t>(n) * n);
  const double h = (hi - lo) / n;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) pts.push_back({lo + (i + 0.5) * h, lo + (j + 0.5) * h});
  return pts;
}

void write_trace_csv(std::ostream& os, const DistillResult& r) {
  os << "point_id,iter,theta_x,theta_y,grad_norm,lambda,cumulative_cost\n";
  for (const auto& t : r.trace)
    os << t.point_id << ',' << t.iter << ',' << format_double(t.theta.x) << ',' << format_double(t.theta.y) << ','
       << format_double(t.grad_norm) << ',' << format_double(t.lambda) << ',' << t.cumulative_cost << '\n';
}

void write_points_csv(std::ostream& os, std::span<const Vec2> points) {
  os << "x,y\n";
  for (const auto& p : points) os << format_double(p.x) << ',' << format_double(p.y) << '\n';
}

std::vector<Vec2> read_points_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("x,y", 0) != 0) throw FormatError("points csv must start with header x,y");
  std::vector<Vec2> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    Vec2 p;
    char comma = 0;
    if (!(ls >> p.x >> comma >> p.y) || comma != ',' || !is_finite(p))
      throw FormatError("points csv row " + std::to_string(row) + ": expected two finite numbers");
    out.push_back(p);
  }
  return out;
}

AscentEstimator make_ascent_estimator(Method method, const EstimatorContext& ctx, double lambda, int n_mc,
                                      bool stable, KernelForm form, NoiseDraw draw) {
  return [=](const Vec2& x, std::uint64_t seed) {
    GradientEstimate g;
    switch (method) {
      case Method::sds: g = sds_gradient(ctx, x, n_mc, seed); break;
      case Method::sdi: g = sdi_gradient(ctx, x, n_mc, seed); break;
      case Method::msd: g = msd_gradient(ctx, msd_guide(x, lambda, ctx.schedule, form), n_mc, seed, stable, draw); break;
    }
    g.grad = ascent_direction(method, g.grad);
    return g;
  };
}

}  // namespace msd

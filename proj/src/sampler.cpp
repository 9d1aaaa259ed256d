#include "msd/sampler.hpp"
#include "msd/format.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "msd/error.hpp"
#include "msd/rng.hpp"

namespace msd {

namespace {

// Noise level in variance-exploding units (z / alpha carries noise sigma / alpha).
double ve_sigma(NoiseLevel level) { return level.sigma / level.alpha; }

std::string describe(const Vec2& v) {
  return "(" + format_double(v.x) + ", " + format_double(v.y) + ")";
}

}  // namespace

std::string_view to_string(KernelForm form) { return form == KernelForm::noised ? "noised" : "fixed"; }

KernelForm parse_kernel_form(std::string_view name) {
  if (name == "noised") return KernelForm::noised;
  if (name == "fixed") return KernelForm::fixed;
  throw std::invalid_argument("unknown kernel form: " + std::string(name));
}

std::string_view to_string(AnchorMode mode) { return mode == AnchorMode::point ? "point" : "inversion"; }

AnchorMode parse_anchor_mode(std::string_view name) {
  if (name == "point") return AnchorMode::point;
  if (name == "inversion") return AnchorMode::inversion;
  throw std::invalid_argument("unknown anchor mode: " + std::string(name));
}

void KernelGuide::validate(const NoiseSchedule& schedule) const {
  if (!(lambda > 0.0)) throw std::invalid_argument("kernel bandwidth must be positive");
  if (!is_finite(anchor)) throw std::invalid_argument("kernel anchor must be finite");
  if (k_lo > k_hi || k_hi >= schedule.num_steps()) throw std::invalid_argument("active interval out of range");
}

KernelGuide default_guide(const Vec2& anchor, double lambda, const NoiseSchedule& schedule, KernelForm form) {
  KernelGuide g;
  g.anchor = anchor;
  g.lambda = lambda;
  g.form = form;
  const std::size_t n = schedule.num_steps();
  if (form == KernelForm::noised) {
    g.k_hi = n - 1;
    g.anchor_mode = AnchorMode::point;
  } else {
    g.k_hi = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)))) - 1;
    g.anchor_mode = AnchorMode::inversion;
  }
  return g;
}

Vec2 ddim_step(const Vec2& z, const Vec2& eps, const NoiseSchedule& schedule, std::size_t step) {
  const NoiseLevel from = noise_at(schedule, step);
  const NoiseLevel to = level_or_clean(schedule, static_cast<std::ptrdiff_t>(step) - 1);
  if (schedule.kind() == ScheduleKind::variance_exploding) return z + (to.sigma - from.sigma) * eps;
  return to.alpha * ((z - from.sigma * eps) / from.alpha) + to.sigma * eps;
}

Vec2 initial_latent(const NoiseSchedule& schedule, std::uint64_t seed) {
  Rng rng(seed);
  const Vec2 n = rng.normal2();
  return schedule.kind() == ScheduleKind::variance_exploding ? schedule.sigma_max() * n : n;
}

std::string_view to_string(NoiseDraw d) { return d == NoiseDraw::iid ? "iid" : "lattice"; }

NoiseDraw parse_noise_draw(std::string_view name) {
  if (name == "iid") return NoiseDraw::iid;
  if (name == "lattice") return NoiseDraw::lattice;
  throw std::invalid_argument("unknown noise draw: " + std::string(name));
}

std::vector<Vec2> initial_latents(const NoiseSchedule& schedule, std::size_t n, std::uint64_t seed, NoiseDraw draw) {
  if (draw == NoiseDraw::iid) {
    std::vector<Vec2> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(initial_latent(schedule, stream_seed(seed, i)));
    return out;
  }
  const double scale = schedule.kind() == ScheduleKind::variance_exploding ? schedule.sigma_max() : 1.0;
  std::vector<Vec2> out = lattice_normals(n, seed);
  for (Vec2& v : out) v = scale * v;
  return out;
}

Trajectory ddim_chain(const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                      const Vec2& z_top, ClassIndex cls) {
  guidance.validate(denoiser);
  ModelCall call(denoiser, guidance);
  const std::size_t n = schedule.num_steps();
  Trajectory t;
  t.states.resize(n + 1);
  t.states[n] = z_top;
  Vec2 z = z_top;
  for (std::size_t k = n; k-- > 0;) {
    z = ddim_step(z, call.eps(z, noise_at(schedule, k), cls), schedule, k);
    t.states[k] = z;
  }
  t.cost = call.cost();
  return t;
}

SampleResult ddim_sample(const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                         std::uint64_t seed, ClassIndex cls) {
  const Trajectory t = ddim_chain(denoiser, guidance, schedule, initial_latent(schedule, seed), cls);
  return {t.clean(), t.cost};
}

Trajectory ddim_invert(const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                       const Vec2& x, ClassIndex cls) {
  if (!is_finite(x)) throw std::invalid_argument("inversion start must be finite");
  guidance.validate(denoiser);
  ModelCall call(denoiser, guidance);
  const std::size_t n = schedule.num_steps();
  Trajectory t;
  t.states.resize(n + 1);
  t.states[0] = x;
  Vec2 z = x;
  for (std::size_t k = 0; k < n; ++k) {
    const NoiseLevel from = level_or_clean(schedule, static_cast<std::ptrdiff_t>(k) - 1);
    const NoiseLevel to = noise_at(schedule, k);
    // The clean endpoint has no noise prediction; use the first level's.
    const NoiseLevel eval = k == 0 ? to : from;
    const Vec2 eps = call.eps(z, eval, cls);
    const Vec2 denoised = (z - from.sigma * eps) / from.alpha;
    z = to.alpha * denoised + to.sigma * eps;
    if (!is_finite(z))
      throw DivergedInversion("inversion diverged at level " + std::to_string(k) + " from x = " + describe(x));
    t.states[k + 1] = z;
  }
  t.cost = call.cost();
  return t;
}

namespace {

enum class Variant { naive, stable };

// Product-density chain in variance-exploding coordinates u = z / alpha.
Trajectory product_chain(const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                         const KernelGuide& guide, const Vec2& z_top, ClassIndex cls, Variant variant,
                         const Trajectory* anchors) {
  guide.validate(schedule);
  guidance.validate(denoiser);
  const std::size_t n = schedule.num_steps();

  Trajectory inversion;
  std::int64_t extra_cost = 0;
  if (variant == Variant::naive || guide.anchor_mode == AnchorMode::point) anchors = nullptr;
  if (variant == Variant::stable && guide.anchor_mode == AnchorMode::inversion) {
    if (anchors == nullptr) {
      inversion = ddim_invert(denoiser, guidance, schedule, guide.anchor, cls);
      extra_cost = inversion.cost;
      anchors = &inversion;
    }
    if (anchors->states.size() != n + 1) throw std::invalid_argument("anchor trajectory length mismatch");
  }

  ModelCall call(denoiser, guidance);
  const Vec2 x = guide.anchor;
  const double kernel_var = kernel_variance(guide.lambda);
  const double lambda2 = guide.lambda * guide.lambda;
  const double bound = 1e6 * (1.0 + ve_sigma(noise_at(schedule, n - 1)) + norm(x));

  Trajectory t;
  t.states.resize(n + 1);
  const NoiseLevel top = noise_at(schedule, n - 1);
  t.states[n] = guide.centre_prior ? z_top + top.alpha * x : z_top;
  Vec2 u = t.states[n] / top.alpha;
  for (std::size_t k = n; k-- > 0;) {
    const NoiseLevel from = noise_at(schedule, k);
    const NoiseLevel to = level_or_clean(schedule, static_cast<std::ptrdiff_t>(k) - 1);
    const double s = ve_sigma(from);
    const double s_next = ve_sigma(to);
    if (!guide.active(k)) {
      const Vec2 d = call.denoise(u, s, cls);
      u = u + (s_next - s) * ((u - d) / s);
    } else if (guide.form == KernelForm::noised) {
      const double sum = kernel_var + s * s;
      const Vec2 c = (s * s * x + kernel_var * u) / sum;
      const double tau = std::sqrt(kernel_var * s * s / sum);
      const Vec2 d = call.denoise(c, tau, cls);
      if (variant == Variant::naive) {
        u = u + (s_next - s) * ((u - d) / s);
      } else {
        const Vec2 a = anchors ? anchors->states[k] / to.alpha : x;
        const double s_mid = 0.5 * (s + s_next);
        const double f = std::sqrt((kernel_var + s_next * s_next) / sum);
        const double f_tail = std::sqrt((kernel_var + s_next * s_next) / (kernel_var + s_mid * s_mid));
        u = a + (u - a) * f + ((s_next - s) * f_tail) * ((c - d) / s);
      }
    } else {
      const Vec2 d = call.denoise(u, s, cls);
      if (variant == Variant::naive) {
        const Vec2 eps = (u - d) / s - s * (2.0 * (x - u) / lambda2);
        u = u + (s_next - s) * eps;
      } else {
        const Vec2 a = anchors ? anchors->states[k] / to.alpha : x;
        const double s_mid = 0.5 * (s + s_next);
        const double f = std::exp((s_next * s_next - s * s) / lambda2);
        const double f_tail = std::exp((s_next * s_next - s_mid * s_mid) / lambda2);
        u = a + (u - a) * f + ((s_next - s) * f_tail) * ((u - d) / s);
      }
    }
    if (!is_finite(u) || norm(u - x) > bound) {
      if (variant == Variant::naive)
        throw IntegratorInstability("kernel-guided integration diverged at level " + std::to_string(k) +
                                    " for anchor " + describe(x) + " (lambda " + std::to_string(guide.lambda) +
                                    ")");
      throw NumericalError("stable product chain left the finite range at level " + std::to_string(k));
    }
    t.states[k] = to.alpha * u;
  }
  t.cost = call.cost() + extra_cost;
  return t;
}

}  // namespace

Trajectory product_chain_naive(const Denoiser& denoiser, const GuidanceConfig& guidance,
                               const NoiseSchedule& schedule, const KernelGuide& guide, const Vec2& z_top,
                               ClassIndex cls) {
  return product_chain(denoiser, guidance, schedule, guide, z_top, cls, Variant::naive, nullptr);
}

SampleResult product_sample_naive(const Denoiser& denoiser, const GuidanceConfig& guidance,
                                  const NoiseSchedule& schedule, const KernelGuide& guide, std::uint64_t seed,
                                  ClassIndex cls) {
  const Trajectory t = product_chain_naive(denoiser, guidance, schedule, guide, initial_latent(schedule, seed), cls);
  return {t.clean(), t.cost};
}

Trajectory product_chain_stable(const Denoiser& denoiser, const GuidanceConfig& guidance,
                                const NoiseSchedule& schedule, const KernelGuide& guide, const Vec2& z_top,
                                ClassIndex cls, const Trajectory* anchors) {
  return product_chain(denoiser, guidance, schedule, guide, z_top, cls, Variant::stable, anchors);
}

SampleResult product_sample_stable(const Denoiser& denoiser, const GuidanceConfig& guidance,
                                   const NoiseSchedule& schedule, const KernelGuide& guide, std::uint64_t seed,
                                   ClassIndex cls, const Trajectory* anchors) {
  const Trajectory t =
      product_chain_stable(denoiser, guidance, schedule, guide, initial_latent(schedule, seed), cls, anchors);
  return {t.clean(), t.cost};
}

void write_trajectory_csv(std::ostream& os, const Trajectory& t) {
  os.precision(17);
  os << "step,z_x,z_y\n";
  for (std::size_t i = 0; i < t.states.size(); ++i) os << i << ',' << t.states[i].x << ',' << t.states[i].y << '\n';
}

}  // namespace msd

#include "msd/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace msd {

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::variance_preserving ? "vp" : "ve";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "ve" || name == "variance_exploding") return ScheduleKind::variance_exploding;
  if (name == "vp" || name == "variance_preserving") return ScheduleKind::variance_preserving;
  throw std::invalid_argument("unknown schedule kind: " + std::string(name));
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<double> t_grid, std::vector<double> alpha,
                             std::vector<double> sigma)
    : kind_(kind), t_grid_(std::move(t_grid)), alpha_(std::move(alpha)), sigma_(std::move(sigma)) {
  if (sigma_.size() < 2 || alpha_.size() != sigma_.size() || t_grid_.size() != sigma_.size())
    throw std::invalid_argument("schedule arrays must have equal length >= 2");
  for (std::size_t i = 1; i < sigma_.size(); ++i) {
    if (!(t_grid_[i] > t_grid_[i - 1])) throw std::invalid_argument("t grid must be strictly increasing");
    if (!(sigma_[i] > sigma_[i - 1])) throw std::invalid_argument("sigma must be strictly increasing");
  }
  if (!(sigma_.front() > 0.0)) throw std::invalid_argument("sigma must be positive");
}

NoiseSchedule make_schedule(ScheduleKind kind, std::size_t num_steps, double sigma_min, double sigma_max) {
  if (num_steps < 2) throw std::invalid_argument("num_steps must be >= 2");
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max))
    throw std::invalid_argument("require 0 < sigma_min < sigma_max");

  std::vector<double> t(num_steps), alpha(num_steps), sigma(num_steps);
  const double last = static_cast<double>(num_steps - 1);
  for (std::size_t i = 0; i < num_steps; ++i) t[i] = static_cast<double>(i + 1) / static_cast<double>(num_steps);

  if (kind == ScheduleKind::variance_exploding) {
    const double ratio = std::log(sigma_max / sigma_min);
    for (std::size_t i = 0; i < num_steps; ++i) {
      sigma[i] = sigma_min * std::exp(ratio * static_cast<double>(i) / last);
      alpha[i] = 1.0;
    }
    sigma.front() = sigma_min;
    sigma.back() = sigma_max;
  } else {
    constexpr double kMaxVp = 0.9999;
    const double lo = std::min(sigma_min, kMaxVp * 0.5);
    const double hi = std::min(sigma_max, kMaxVp);
    if (!(lo < hi)) throw std::invalid_argument("variance-preserving bounds collapse after clamping");
    const double u_lo = std::asin(lo) * 2.0 / std::numbers::pi;
    const double u_hi = std::asin(hi) * 2.0 / std::numbers::pi;
    for (std::size_t i = 0; i < num_steps; ++i) {
      const double u = u_lo + (u_hi - u_lo) * static_cast<double>(i) / last;
      const double angle = 0.5 * std::numbers::pi * u;
      sigma[i] = std::sin(angle);
      alpha[i] = std::cos(angle);
    }
  }
  return NoiseSchedule(kind, std::move(t), std::move(alpha), std::move(sigma));
}

NoiseLevel noise_at(const NoiseSchedule& schedule, std::size_t index) {
  if (index >= schedule.num_steps()) throw std::out_of_range("schedule index out of range");
  return {schedule.alpha()[index], schedule.sigma()[index]};
}

NoiseLevel level_or_clean(const NoiseSchedule& schedule, std::ptrdiff_t index) {
  if (index < 0) return {1.0, 0.0};
  return noise_at(schedule, static_cast<std::size_t>(index));
}

}  // namespace msd

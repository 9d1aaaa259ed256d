#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace msd {

enum class ScheduleKind { variance_preserving, variance_exploding };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

struct NoiseLevel {
  double alpha;
  double sigma;
};

/// Discrete diffusion time grid. Index 0 is the least noisy level; the
/// clean endpoint (alpha = 1, sigma = 0) sits below index 0 and is not stored.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, std::vector<double> t_grid, std::vector<double> alpha,
                std::vector<double> sigma);

  ScheduleKind kind() const { return kind_; }
  std::size_t num_steps() const { return sigma_.size(); }
  const std::vector<double>& t_grid() const { return t_grid_; }
  const std::vector<double>& alpha() const { return alpha_; }
  const std::vector<double>& sigma() const { return sigma_; }

  double sigma_min() const { return sigma_.front(); }
  double sigma_max() const { return sigma_.back(); }

 private:
  ScheduleKind kind_;
  std::vector<double> t_grid_;
  std::vector<double> alpha_;
  std::vector<double> sigma_;
};

/// Variance-exploding: sigma geometric from sigma_min to sigma_max, alpha = 1.
/// Variance-preserving: sigma = sin(pi u / 2) with u linear between the
/// arcsine images of the (clamped) bounds, alpha = sqrt(1 - sigma^2).
NoiseSchedule make_schedule(ScheduleKind kind, std::size_t num_steps, double sigma_min, double sigma_max);

/// Noise level at `index`; throws std::out_of_range past the grid.
NoiseLevel noise_at(const NoiseSchedule& schedule, std::size_t index);

/// Level `index` where index == -1 denotes the clean endpoint.
NoiseLevel level_or_clean(const NoiseSchedule& schedule, std::ptrdiff_t index);

}  // namespace msd

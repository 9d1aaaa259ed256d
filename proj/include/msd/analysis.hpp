#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "msd/distill.hpp"
#include "msd/gmm.hpp"

namespace msd {

/// Mean of -log density over the points.
double nll(std::span<const Vec2> points, const GaussianMixture& gmm, ClassIndex cls = std::nullopt);

/// Median pairwise distance of the pooled sets, over a subset chosen after a
/// lexicographic sort so the result does not depend on input order.
double median_heuristic(std::span<const Vec2> x, std::span<const Vec2> y, std::size_t max_points = 2000);

/// Biased (V-statistic) squared MMD with kernel exp(-|a - b|^2 / (2 h^2)).
/// bandwidth <= 0 selects the median heuristic.
double mmd(std::span<const Vec2> x, std::span<const Vec2> y, double bandwidth = 0.0);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// k-NN manifold precision and recall.
PrecisionRecall precision_recall(std::span<const Vec2> generated, std::span<const Vec2> reference, int k = 5);

/// Distance from each point to its k-th nearest neighbour in the same set.
std::vector<double> knn_radii(std::span<const Vec2> points, int k);

struct MetricsReport {
  double nll = 0.0;
  double mmd = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double efficiency_log10 = 0.0;
};

inline constexpr double kEfficiencyCap = 20.0;

using ReferenceGradient = std::function<Vec2(const Vec2&)>;

struct EfficiencyResult {
  double log10_efficiency = 0.0;  ///< capped to +-kEfficiencyCap
  double mse = 0.0;               ///< direction-normalized, averaged over probes and trials
  double cost = 0.0;              ///< mean invocations per estimate
  std::size_t probes_used = 0;
};

/// Estimator efficiency |g|^2 / (MSE * cost). Per probe, the reference g and
/// the estimator's trial-mean are both scaled to unit length (the same
/// scale applied to every trial), so MSE measures directional accuracy.
/// Probes with a zero reference or zero estimator mean are skipped.
EfficiencyResult efficiency(const AscentEstimator& estimator, std::span<const Vec2> probes,
                            const ReferenceGradient& reference, int trials, std::uint64_t seed, int threads = 1);

struct LandscapeGrid {
  double lo = -1.5;
  double hi = 1.5;
  int resolution = 64;
  std::vector<Vec2> grad_field;  ///< row-major, x fastest, at cell centres
  std::vector<double> potential;
  double residual = 0.0;  ///< mean squared edge mismatch of the least-squares fit
  double cell() const { return (hi - lo) / resolution; }
  Vec2 centre(int i, int j) const { return {lo + (i + 0.5) * cell(), lo + (j + 0.5) * cell()}; }
};

/// Least-squares potential for a sampled field: minimizes the squared
/// mismatch between potential differences and the averaged field along every
/// grid edge (discrete Poisson equation with natural boundaries); min set to 0.
void reconstruct_potential(LandscapeGrid& grid);

/// Averages n_mc_per_cell ascent estimates per cell and reconstructs the potential.
LandscapeGrid landscape(const AscentEstimator& estimator, double lo, double hi, int resolution, int n_mc_per_cell,
                        std::uint64_t seed, int threads = 1);

/// Grid of an exact field, for oracles and plots.
LandscapeGrid sample_field(const std::function<Vec2(const Vec2&)>& field, double lo, double hi, int resolution);

/// Strict 8-neighbourhood maxima, kept greedily by height with suppression radius min_separation.
std::vector<Vec2> find_local_maxima(const LandscapeGrid& grid, double min_separation);

/// Local maxima of a mixture density (fixed-point ascent from every component mean,
/// kept when the Hessian of log density is negative definite).
std::vector<Vec2> find_modes(const GaussianMixture& gmm, ClassIndex cls = std::nullopt);

/// Distance from p to the nearest point of the set (infinity when empty).
double nearest_distance(const Vec2& p, std::span<const Vec2> set);

void write_landscape_csv(std::ostream& os, const LandscapeGrid& grid);
/// Binary PPM of a scalar field (row 0 at the top = largest y).
void write_heatmap_ppm(std::ostream& os, std::span<const double> values, int width, int height);
/// Histogram of points over [lo, hi]^2 rendered as a PPM heatmap.
void write_density_ppm(std::ostream& os, std::span<const Vec2> points, double lo, double hi, int resolution);

}  // namespace msd

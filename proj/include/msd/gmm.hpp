#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "msd/vec2.hpp"

namespace msd {

using ClassIndex = std::optional<int>;

struct GaussianComponent {
  double weight = 1.0;
  Vec2 mean;
  Sym2 covariance;
  int label = -1;  ///< -1 when the mixture is unconditional
};

/// Analytic 2D Gaussian mixture with exact density and score.
class GaussianMixture {
 public:
  /// Validates and renormalizes nothing: weights must already sum to 1 within 1e-9.
  explicit GaussianMixture(std::vector<GaussianComponent> components);

  const std::vector<GaussianComponent>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  bool conditional() const { return num_classes_ > 0; }
  int num_classes() const { return num_classes_; }
  /// Total weight of the components carrying `label`.
  double class_prior(int label) const;

  double density(const Vec2& x, ClassIndex cls = std::nullopt) const;
  double log_density(const Vec2& x, ClassIndex cls = std::nullopt) const;
  /// Gradient of log density.
  Vec2 score(const Vec2& x, ClassIndex cls = std::nullopt) const;
  /// Gradient of density (not log).
  Vec2 density_gradient(const Vec2& x, ClassIndex cls = std::nullopt) const;

  void check_class(ClassIndex cls) const;

 private:
  struct Cache {
    Sym2 precision;
    double log_norm;  // log(weight) - log(2 pi sqrt(det))
  };
  template <class F>
  void for_each_term(const Vec2& x, ClassIndex cls, F&& f) const;

  std::vector<GaussianComponent> components_;
  std::vector<Cache> cache_;
  int num_classes_ = 0;
};

/// Sampled training set u_i with optional labels.
struct Dataset {
  std::vector<Vec2> points;
  std::vector<int> labels;  ///< empty or same length as points
  std::shared_ptr<const GaussianMixture> source;
  std::uint64_t seed = 0;

  bool labeled() const { return !labels.empty(); }
  std::size_t size() const { return points.size(); }
  /// Points with the given label (all points when cls is empty).
  std::vector<Vec2> select(ClassIndex cls) const;
};

struct FractalParams {
  int depth = 5;
  int branch_factor = 2;
  double anisotropy = 20.0;
  std::uint64_t seed = 0;
};

/// Two-class branching mixture of needle-like Gaussians (leaves of a
/// recursive tree); branch_factor^(depth-1) leaves per class.
GaussianMixture build_fractal(int depth, int branch_factor, double anisotropy, std::uint64_t seed);
/// Components along an Archimedean spiral r = a * theta, spaced uniformly in arc length.
GaussianMixture build_spiral(int num_components, double turns, double noise);
/// Radially stretched blades, each twisted by an angle proportional to radius.
GaussianMixture build_pinwheel(int num_blades, int points_per_blade, double twist);

enum class SampleDraw {
  iid,         ///< independent draws
  stratified,  ///< largest-remainder component counts, lattice normals within each component
};
std::string_view to_string(SampleDraw d);
SampleDraw parse_sample_draw(std::string_view name);

/// n draws from the (class-conditional) mixture.
Dataset sample(std::shared_ptr<const GaussianMixture> gmm, std::size_t n, std::uint64_t seed,
               ClassIndex cls = std::nullopt, SampleDraw draw = SampleDraw::iid);

/// Exact convolution with G_lambda(x) ~ exp(-|x|^2 / lambda^2), i.e. every
/// covariance grows by (lambda^2 / 2) I.
GaussianMixture smoothed(const GaussianMixture& gmm, double lambda);

/// Kernel variance per axis for bandwidth lambda.
constexpr double kernel_variance(double lambda) { return 0.5 * lambda * lambda; }

void write_mixture_csv(std::ostream& os, const GaussianMixture& gmm);
GaussianMixture read_mixture_csv(std::istream& is);
void write_dataset_csv(std::ostream& os, const Dataset& data);
Dataset read_dataset_csv(std::istream& is);

}  // namespace msd

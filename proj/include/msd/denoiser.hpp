#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "msd/gmm.hpp"
#include "msd/schedule.hpp"
#include "msd/vec2.hpp"

namespace msd {

/// Posterior-mean denoiser in variance-exploding units: given z = x + sigma * e,
/// returns an estimate of E[x | z]. Implementations are immutable and thread safe.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Vec2 denoise(const Vec2& z, double sigma, ClassIndex cls) const = 0;
  virtual bool conditional() const = 0;
};

/// Grid-bucketed point set answering softmax-weighted means.
class PointIndex {
 public:
  explicit PointIndex(std::vector<Vec2> points);

  std::size_t size() const { return xs_.size(); }
  /// Points in internal (cell-sorted) order.
  Vec2 point(std::size_t i) const { return {xs_[i], ys_[i]}; }
  Vec2 mean() const { return mean_; }

  /// sum_i u_i w_i / sum_i w_i with w_i = exp(-|z - u_i|^2 / (2 sigma^2)).
  /// Terms below exp(-50) of the largest are skipped.
  Vec2 weighted_mean(const Vec2& z, double sigma) const;

 private:
  Vec2 brute_force(const Vec2& z, double sigma) const;
  /// Difference-of-squares evaluation, used when the fast sum degenerates far from the data.
  Vec2 precise(const Vec2& z, double sigma) const;
  Vec2 finish(double weight, double sx, double sy, const Vec2& z, double sigma) const;
  double nearest_distance2(const Vec2& z) const;
  int cell_x(double x) const;
  int cell_y(double y) const;

  std::vector<double> xs_, ys_;  // sorted by cell, row-major over cells
  Vec2 mean_;
  double lo_x_ = 0, lo_y_ = 0, hi_x_ = 0, hi_y_ = 0, cell_ = 1;
  int nx_ = 1, ny_ = 1;
  std::vector<std::uint32_t> cell_start_;  // offsets into xs_/ys_, size nx*ny+1
  double brute_sigma_ = 0;                 // sigma above which all points are summed
};

/// Closed-form Bayes-optimal denoiser over a finite training set:
/// a softmax(-|z - u_i|^2 / (2 sigma^2)) weighted mean of the points.
class IdealDenoiser final : public Denoiser {
 public:
  explicit IdealDenoiser(const Dataset& data);

  Vec2 denoise(const Vec2& z, double sigma, ClassIndex cls) const override;
  bool conditional() const override { return !per_class_.empty(); }
  std::size_t size() const { return all_.size(); }
  const PointIndex& index(ClassIndex cls) const;

 private:
  PointIndex all_;
  std::vector<PointIndex> per_class_;
};

/// Ideal denoiser output, the discrete mean-shift iterate at bandwidth sqrt(2) sigma.
Vec2 ideal_denoise(const IdealDenoiser& d, const Vec2& z, double sigma, ClassIndex cls = std::nullopt);

/// Classical mean-shift iterate sum_i G(x - u_i) u_i / sum_i G(x - u_i) with
/// G(v) = exp(-|v|^2 / lambda^2), summed directly over every point.
Vec2 mean_shift_iterate(std::span<const Vec2> points, const Vec2& x, double lambda);

/// (z - alpha * denoised) / sigma.
Vec2 eps_from_denoised(const Vec2& z, const Vec2& denoised, double alpha, double sigma);
/// Inverse of eps_from_denoised.
Vec2 denoised_from_eps(const Vec2& z, const Vec2& eps, double alpha, double sigma);

// --- learned MLP ------------------------------------------------------------

struct EmbeddingConfig {
  std::uint32_t fourier_features = 16;  ///< even; cos/sin pairs of log(sigma)/4
  std::uint32_t num_classes = 0;        ///< one-hot width, 0 for unconditional
  std::uint32_t skip = 1;               ///< 1: D = c_skip z + c_out F, 0: D = F
  std::uint32_t activation = 0;         ///< 0: SiLU, 1: ReLU

  friend bool operator==(const EmbeddingConfig&, const EmbeddingConfig&) = default;
};

struct DenseLayer {
  std::uint32_t in_dim = 0;
  std::uint32_t out_dim = 0;
  std::vector<float> weight;  ///< row-major out_dim x in_dim
  std::vector<float> bias;    ///< out_dim
};

struct MlpWeights {
  std::vector<DenseLayer> layers;
  EmbeddingConfig embedding;

  std::uint32_t input_dim() const { return 2 + embedding.fourier_features + embedding.num_classes; }
  void validate() const;
};

inline constexpr std::array<char, 4> kWeightMagic{'M', 'S', 'D', 'W'};
inline constexpr std::uint32_t kWeightVersion = 1;
inline constexpr double kSigmaData = 0.5;

/// Binary MSDW file: little-endian header (magic, version, layer count,
/// per-layer in/out dims, four embedding fields) then every weight matrix,
/// then every bias vector, in layer order.
std::vector<std::uint8_t> encode_weights(const MlpWeights& w);
MlpWeights decode_weights(std::span<const std::uint8_t> bytes);
/// JSON mirror of the header.
std::string weights_sidecar_json(const MlpWeights& w);
void save_weights(const std::filesystem::path& path, const MlpWeights& w);
/// Loads the binary file; when `path`.json exists its header must agree.
MlpWeights load_weights(const std::filesystem::path& path);

class LearnedDenoiser final : public Denoiser {
 public:
  explicit LearnedDenoiser(MlpWeights weights);
  static LearnedDenoiser load(const std::filesystem::path& path) { return LearnedDenoiser(load_weights(path)); }

  Vec2 denoise(const Vec2& z, double sigma, ClassIndex cls) const override;
  bool conditional() const override { return weights_.embedding.num_classes > 0; }
  const MlpWeights& weights() const { return weights_; }

 private:
  MlpWeights weights_;
};

Vec2 mlp_forward(const LearnedDenoiser& m, const Vec2& z, double sigma, ClassIndex cls = std::nullopt);

// --- guidance -------------------------------------------------------------

enum class GuidanceMode { none, cfg, autoguidance };
std::string_view to_string(GuidanceMode mode);
GuidanceMode parse_guidance_mode(std::string_view name);

struct GuidanceConfig {
  GuidanceMode mode = GuidanceMode::none;
  double scale = 0.0;
  std::shared_ptr<const Denoiser> reference;  ///< degraded model for autoguidance

  /// Throws std::invalid_argument when the configuration cannot run on `primary`.
  void validate(const Denoiser& primary) const;
  /// Denoiser invocations per guided evaluation.
  int evals_per_call() const { return mode == GuidanceMode::none ? 1 : 2; }
};

/// Evaluates the guided denoiser and tallies score-model invocations.
/// One instance per sampling chain; not shared between threads.
class ModelCall {
 public:
  ModelCall(const Denoiser& primary, const GuidanceConfig& guidance) : primary_(primary), guidance_(guidance) {}

  /// Guided posterior mean at variance-exploding level sigma.
  Vec2 denoise(const Vec2& z, double sigma, ClassIndex cls);
  /// Guided posterior mean for a latent at (alpha, sigma).
  Vec2 denoise(const Vec2& z, NoiseLevel level, ClassIndex cls) {
    return denoise(z / level.alpha, level.sigma / level.alpha, cls);
  }
  Vec2 eps(const Vec2& z, NoiseLevel level, ClassIndex cls) {
    return eps_from_denoised(z, denoise(z, level, cls), level.alpha, level.sigma);
  }
  std::int64_t cost() const { return cost_; }

 private:
  const Denoiser& primary_;
  const GuidanceConfig& guidance_;
  std::int64_t cost_ = 0;
};

/// Guided noise prediction at schedule index `step`:
/// none -> eps(z|c); cfg -> (1+w) eps(z|c) - w eps(z); autoguidance -> (1+w) eps(z|c) - w eps_ref(z|c).
Vec2 guided_eps(const GuidanceConfig& g, const Denoiser& primary, const NoiseSchedule& schedule, const Vec2& z,
                std::size_t step, ClassIndex cls);

/// The autoguidance stand-in: a weaker model evaluated at a scaled noise level.
class DegradedDenoiser final : public Denoiser {
 public:
  DegradedDenoiser(std::shared_ptr<const Denoiser> inner, double sigma_scale)
      : inner_(std::move(inner)), sigma_scale_(sigma_scale) {}
  Vec2 denoise(const Vec2& z, double sigma, ClassIndex cls) const override {
    return inner_->denoise(z, sigma * sigma_scale_, cls);
  }
  bool conditional() const override { return inner_->conditional(); }

 private:
  std::shared_ptr<const Denoiser> inner_;
  double sigma_scale_;
};

/// Ideal denoiser over a deterministic 10% subsample evaluated at 2 sigma.
std::shared_ptr<const Denoiser> make_autoguidance_reference(const Dataset& data, std::uint64_t seed);

/// Wraps a denoiser and counts every call (thread safe).
class CountingDenoiser final : public Denoiser {
 public:
  explicit CountingDenoiser(const Denoiser& inner) : inner_(inner) {}
  Vec2 denoise(const Vec2& z, double sigma, ClassIndex cls) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.denoise(z, sigma, cls);
  }
  bool conditional() const override { return inner_.conditional(); }
  std::int64_t calls() const { return calls_.load(); }
  void reset() { calls_ = 0; }

 private:
  const Denoiser& inner_;
  mutable std::atomic<std::int64_t> calls_{0};
};

}  // namespace msd

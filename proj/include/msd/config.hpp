#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "msd/distill.hpp"
#include "msd/gmm.hpp"

namespace msd {

struct DatasetSpec {
  std::string name = "spiral";  ///< spiral | pinwheel | fractal | gaussian | mixture
  std::string mixture_path;     ///< mixture CSV when name == mixture
  std::int64_t size = 10000;
  SampleDraw draw = SampleDraw::stratified;
  std::uint64_t seed = 11;
  int spiral_components = 100;
  double spiral_turns = 2.0;
  double spiral_noise = 0.02;
  int pinwheel_blades = 5;
  int pinwheel_per_blade = 10;
  double pinwheel_twist = 1.5;
  int fractal_depth = 5;
  int fractal_branch = 2;
  double fractal_anisotropy = 20.0;
  std::uint64_t fractal_seed = 0;
  Vec2 gaussian_mean{0.3, -0.2};
  double gaussian_sd = 0.25;
};

struct DenoiserSpec {
  std::string kind = "ideal";  ///< ideal | learned
  std::string weights;         ///< MSDW path when kind == learned
};

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::variance_exploding;
  std::int64_t steps = 32;
  double sigma_min = 0.002;
  double sigma_max = 0.0;  ///< 0 selects twice the dataset diameter
};

struct MethodSpec {
  std::string name = "msd";  ///< ddim | sds | sdi | msd
  bool stable = false;
  KernelForm kernel_form = KernelForm::noised;
  NoiseDraw noise_draw = NoiseDraw::lattice;
  int n_mc = 1;
  double lambda = 0.3;  ///< fixed bandwidth for landscape and efficiency
};

struct ExperimentConfig {
  DatasetSpec dataset;
  DenoiserSpec denoiser;
  GuidanceMode guidance_mode = GuidanceMode::none;
  double guidance_scale = 4.0;
  std::string class_name;  ///< empty, a class index, or a fractal class name
  ScheduleSpec schedule;
  MethodSpec method;
  AdamConfig optimizer;
  std::int64_t iterations = 150;
  BandwidthSchedule bandwidth;
  double grid_lo = -1.5;
  double grid_hi = 1.5;
  int grid_n = 64;
  int landscape_resolution = 48;
  int landscape_n_mc = 4;
  double landscape_separation = 0.0;  ///< 0 selects two cells
  std::int64_t sample_count = 10000;
  int metrics_k = 5;
  double metrics_bandwidth = 0.0;  ///< 0 selects the median heuristic
  std::int64_t metrics_reference_size = 10000;
  std::string metrics_points;  ///< evaluate this points CSV instead of distilling
  int efficiency_probes = 32;
  int efficiency_trials = 30;
  std::string efficiency_methods = "sds,sdi,msd";
  std::string efficiency_datasets = "fractal,spiral";
  std::uint64_t seed = 0;
  std::string output_dir;  ///< empty selects $MSD_OUTPUT_ROOT/<command>

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Names of every recognised key in canonical (sorted) order.
std::vector<std::string> config_keys();

/// Assigns one dotted key; throws ConfigError on an unknown key or a bad value.
void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const ExperimentConfig& cfg, std::string_view key);

/// Parses "key = value" lines; '#' starts a comment. Errors carry the line number.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Every key in sorted order, one "key = value" line each; parse_config inverts it exactly.
std::string serialize_config(const ExperimentConfig& cfg);

/// Resolves class_name against a mixture: empty -> none, digits -> index, fractal names blue/orange -> 0/1.
ClassIndex resolve_class(const std::string& class_name, const GaussianMixture* gmm);

}  // namespace msd

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msd/analysis.hpp"
#include "msd/config.hpp"

namespace msd {

enum class ExitCode : int {
  ok = 0,
  failure = 1,
  config_error = 2,
  format_error = 3,
  numerical_error = 4,
};

/// Exit code for an exception escaping a run.
ExitCode exit_code_for(const std::exception& e);

/// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the bytes, as hex.
std::string git_blob_sha1(std::span<const std::uint8_t> bytes);
std::string git_blob_sha1(std::string_view text);
std::string git_blob_sha1_file(const std::filesystem::path& path);

/// Dataset, denoiser, schedule and guidance assembled from a config.
struct Experiment {
  std::shared_ptr<const GaussianMixture> mixture;
  Dataset data;
  std::shared_ptr<const Denoiser> denoiser;
  GuidanceConfig guidance;
  NoiseSchedule schedule;
  ClassIndex cls;

  EstimatorContext context() const { return {*denoiser, guidance, schedule, cls}; }
};

std::shared_ptr<const GaussianMixture> build_mixture(const DatasetSpec& spec);
/// Largest pairwise distance.
double diameter(std::span<const Vec2> points);
Experiment build_experiment(const ExperimentConfig& cfg);

/// output.dir when set, otherwise $MSD_OUTPUT_ROOT/<command> (default root "runs").
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, std::string_view command);

struct RunReport {
  std::filesystem::path dir;
  std::vector<std::string> files;  ///< outputs relative to dir, manifest last
};

RunReport run_sample(const ExperimentConfig& cfg, int threads = 1);
RunReport run_distill(const ExperimentConfig& cfg, int threads = 1);
RunReport run_landscape(const ExperimentConfig& cfg, int threads = 1);
RunReport run_metrics(const ExperimentConfig& cfg, int threads = 1);
RunReport run_efficiency(const ExperimentConfig& cfg, int threads = 1);

/// Dispatches on sample | distill | landscape | metrics | efficiency.
RunReport run_command(std::string_view command, const ExperimentConfig& cfg, int threads = 1);

/// Metrics of a point set against fresh reference draws of the experiment's mixture.
MetricsReport evaluate_points(const ExperimentConfig& cfg, const Experiment& ex, std::span<const Vec2> points,
                              int threads = 1);

}  // namespace msd

#include "msd/runner.hpp"
#include "msd/format.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "msd/error.hpp"
#include "msd/parallel.hpp"
#include "msd/rng.hpp"
#include "msd/version.hpp"
#include <json.hpp>

namespace msd {

namespace {

constexpr std::uint64_t kReferenceStream = 0x7265665fULL;
constexpr std::uint64_t kProbeStream = 0x70726f62ULL;
constexpr std::uint64_t kAutoguidanceStream = 0x61677569ULL;
constexpr int kHeatmapResolution = 128;

std::string hex(const unsigned char* digest, unsigned int n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out += digits[digest[i] >> 4];
    out += digits[digest[i] & 15];
  }
  return out;
}

std::string num(double v) { return format_double(v); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

/// Collects output files, then writes a manifest describing them.
class OutputDir {
 public:
  OutputDir(std::filesystem::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    std::filesystem::create_directories(dir_);
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    std::ofstream os(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
    body(os);
    if (!os) throw std::runtime_error("write failed for " + (dir_ / name).string());
    files_.push_back(name);
  }

  void append(const std::string& name, const std::string& header, const std::string& row) {
    const auto path = dir_ / name;
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream os(path, std::ios::binary | std::ios::app);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    if (fresh) os << header << '\n';
    os << row << '\n';
    files_.push_back(name);
  }

  RunReport finish(const ExperimentConfig& cfg) {
    ExperimentConfig canonical = cfg;
    canonical.output_dir.clear();
    const std::string text = serialize_config(canonical);
    nlohmann::ordered_json m;
    m["command"] = command_;
    m["config"] = text;
    m["config_sha1"] = git_blob_sha1(text);
    m["seed"] = cfg.seed;
    nlohmann::ordered_json inputs = nlohmann::ordered_json::array();
    auto add_input = [&](const std::string& key, const std::string& path) {
      if (path.empty()) return;
      inputs.push_back({{"key", key}, {"path", path}, {"sha1", git_blob_sha1_file(path)}});
    };
    if (cfg.dataset.name == "mixture") add_input("dataset.mixture_path", cfg.dataset.mixture_path);
    if (cfg.denoiser.kind == "learned") add_input("denoiser.weights", cfg.denoiser.weights);
    add_input("metrics.points", cfg.metrics_points);
    m["inputs"] = inputs;
    nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
    for (const auto& f : files_) outputs.push_back({{"file", f}, {"sha1", git_blob_sha1_file(dir_ / f)}});
    m["outputs"] = outputs;
    m["versions"] = {{"msd", kVersion}, {"weights_format", 1}, {"compiler", __VERSION__}};
    write("manifest.json", [&](std::ostream& os) { os << m.dump(2) << '\n'; });
    return {dir_, files_};
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::string command_;
  std::vector<std::string> files_;
};

Method estimator_method(const ExperimentConfig& cfg) {
  if (cfg.method.name == "ddim") throw ConfigError("method.name: ddim has no gradient estimator; use sds, sdi or msd");
  return parse_method(cfg.method.name);
}

std::vector<Vec2> probes_for(const ExperimentConfig& cfg, const Experiment& ex) {
  auto smooth = std::make_shared<GaussianMixture>(smoothed(*ex.mixture, cfg.method.lambda));
  const ClassIndex cls = ex.mixture->conditional() ? ex.cls : std::nullopt;
  return sample(smooth, static_cast<std::size_t>(cfg.efficiency_probes), stream_seed(cfg.seed, kProbeStream), cls,
                SampleDraw::iid)
      .points;
}

EfficiencyResult efficiency_for(const ExperimentConfig& cfg, const Experiment& ex, Method method, int threads) {
  const EstimatorContext ctx = ex.context();
  const AscentEstimator est = make_ascent_estimator(method, ctx, cfg.method.lambda, cfg.method.n_mc, cfg.method.stable,
                                                    cfg.method.kernel_form, cfg.method.noise_draw);
  const std::vector<Vec2> pts = ex.data.select(ex.cls);
  const double lambda = cfg.method.lambda;
  const ReferenceGradient ref = [&pts, lambda](const Vec2& x) { return mean_shift_iterate(pts, x, lambda) - x; };
  return efficiency(est, probes_for(cfg, ex), ref, cfg.efficiency_trials, cfg.seed, threads);
}

DistillResult distill(const ExperimentConfig& cfg, const Experiment& ex, int threads) {
  DistillConfig dc;
  dc.method = estimator_method(cfg);
  dc.iterations = cfg.iterations;
  dc.adam = cfg.optimizer;
  dc.bandwidth = cfg.bandwidth;
  dc.n_mc = cfg.method.n_mc;
  dc.stable = cfg.method.stable;
  dc.kernel_form = cfg.method.kernel_form;
  dc.noise_draw = cfg.method.noise_draw;
  dc.cls = ex.cls;
  const std::vector<Vec2> init = make_grid(cfg.grid_lo, cfg.grid_hi, cfg.grid_n);
  return distill_run(dc, ex.context(), init, cfg.seed, threads);
}

std::vector<Vec2> ddim_samples(const ExperimentConfig& cfg, const Experiment& ex, int threads,
                               std::vector<std::int64_t>* costs = nullptr) {
  const auto n = static_cast<std::size_t>(cfg.sample_count);
  std::vector<SampleResult> out(n);
  parallel_for(n, threads, [&](std::size_t i) {
    out[i] = ddim_sample(*ex.denoiser, ex.guidance, ex.schedule, stream_seed(cfg.seed, i), ex.cls);
  });
  std::vector<Vec2> pts;
  for (const auto& r : out) {
    pts.push_back(r.sample);
    if (costs) costs->push_back(r.cost);
  }
  return pts;
}

}  // namespace

ExitCode exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::config_error;
  if (dynamic_cast<const FormatError*>(&e)) return ExitCode::format_error;
  if (dynamic_cast<const NumericalError*>(&e)) return ExitCode::numerical_error;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return ExitCode::config_error;
  return ExitCode::failure;
}

std::string git_blob_sha1(std::span<const std::uint8_t> bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  return hex(digest, len);
}

std::string git_blob_sha1(std::string_view text) {
  return git_blob_sha1(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string git_blob_sha1_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read input file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return git_blob_sha1(std::string_view(ss.str()));
}

std::shared_ptr<const GaussianMixture> build_mixture(const DatasetSpec& spec) {
  try {
    if (spec.name == "spiral")
      return std::make_shared<GaussianMixture>(build_spiral(spec.spiral_components, spec.spiral_turns, spec.spiral_noise));
    if (spec.name == "pinwheel")
      return std::make_shared<GaussianMixture>(
          build_pinwheel(spec.pinwheel_blades, spec.pinwheel_per_blade, spec.pinwheel_twist));
    if (spec.name == "fractal")
      return std::make_shared<GaussianMixture>(
          build_fractal(spec.fractal_depth, spec.fractal_branch, spec.fractal_anisotropy, spec.fractal_seed));
    if (spec.name == "gaussian")
      return std::make_shared<GaussianMixture>(std::vector<GaussianComponent>{
          {1.0, spec.gaussian_mean, Sym2::identity(spec.gaussian_sd * spec.gaussian_sd), -1}});
  } catch (const std::invalid_argument& e) {
    throw ConfigError("dataset: " + std::string(e.what()));
  }
  if (spec.name == "mixture") {
    std::ifstream in(spec.mixture_path, std::ios::binary);
    if (!in) throw ConfigError("dataset.mixture_path: cannot open '" + spec.mixture_path + "'");
    try {
      return std::make_shared<GaussianMixture>(read_mixture_csv(in));
    } catch (const std::invalid_argument& e) {
      throw FormatError(spec.mixture_path + ": " + e.what());
    }
  }
  throw ConfigError("dataset.name: unknown dataset '" + spec.name + "'");
}

double diameter(std::span<const Vec2> points) {
  std::vector<Vec2> p(points.begin(), points.end());
  std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (p.size() < 2) return 0.0;
  std::vector<Vec2> hull(2 * p.size());
  std::size_t k = 0;
  for (const auto& q : p) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], q) <= 0.0) --k;
    hull[k++] = q;
  }
  for (std::size_t i = p.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p[i]) <= 0.0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k > 1 ? k - 1 : k);
  double best = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i)
    for (std::size_t j = i + 1; j < hull.size(); ++j) best = std::max(best, norm2(hull[i] - hull[j]));
  return std::sqrt(best);
}

Experiment build_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  auto mixture = build_mixture(cfg.dataset);
  const ClassIndex cls = resolve_class(cfg.class_name, mixture.get());
  Dataset data = sample(mixture, static_cast<std::size_t>(cfg.dataset.size), cfg.dataset.seed, std::nullopt,
                        cfg.dataset.draw);
  std::shared_ptr<const Denoiser> den;
  if (cfg.denoiser.kind == "learned") {
    den = std::make_shared<LearnedDenoiser>(LearnedDenoiser::load(cfg.denoiser.weights));
  } else {
    den = std::make_shared<IdealDenoiser>(data);
  }
  const double sigma_max = cfg.schedule.sigma_max > 0.0 ? cfg.schedule.sigma_max : 2.0 * diameter(data.points);
  if (!(sigma_max > cfg.schedule.sigma_min))
    throw ConfigError("schedule.sigma_max: automatic value " + num(sigma_max) + " does not exceed sigma_min");
  GuidanceConfig guidance;
  guidance.mode = cfg.guidance_mode;
  guidance.scale = cfg.guidance_mode == GuidanceMode::none ? 0.0 : cfg.guidance_scale;
  if (guidance.mode == GuidanceMode::autoguidance)
    guidance.reference = make_autoguidance_reference(data, stream_seed(cfg.seed, kAutoguidanceStream));
  try {
    guidance.validate(*den);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("guidance: ") + e.what());
  }
  if (cls && !den->conditional()) throw ConfigError("class: the denoiser is unconditional");
  return {mixture,
          std::move(data),
          std::move(den),
          std::move(guidance),
          make_schedule(cfg.schedule.kind, static_cast<std::size_t>(cfg.schedule.steps), cfg.schedule.sigma_min,
                        sigma_max),
          cls};
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, std::string_view command) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("MSD_OUTPUT_ROOT");
  return std::filesystem::path(root && *root ? root : "runs") / std::string(command);
}

RunReport run_sample(const ExperimentConfig& cfg, int threads) {
  const Experiment ex = build_experiment(cfg);
  std::vector<std::int64_t> costs;
  const std::vector<Vec2> pts = ddim_samples(cfg, ex, threads, &costs);
  OutputDir out(resolve_output_dir(cfg, "sample"), "sample");
  out.write("samples.csv", [&](std::ostream& os) {
    os << "sample_id,x,y,cost\n";
    for (std::size_t i = 0; i < pts.size(); ++i)
      os << i << ',' << num(pts[i].x) << ',' << num(pts[i].y) << ',' << costs[i] << '\n';
  });
  out.write("samples.ppm", [&](std::ostream& os) {
    write_density_ppm(os, pts, cfg.grid_lo, cfg.grid_hi, kHeatmapResolution);
  });
  return out.finish(cfg);
}

RunReport run_distill(const ExperimentConfig& cfg, int threads) {
  const Experiment ex = build_experiment(cfg);
  const DistillResult r = distill(cfg, ex, threads);
  OutputDir out(resolve_output_dir(cfg, "distill"), "distill");
  out.write("trace.csv", [&](std::ostream& os) { write_trace_csv(os, r); });
  out.write("final_points.csv", [&](std::ostream& os) { write_points_csv(os, r.finals); });
  out.write("final_points.ppm", [&](std::ostream& os) {
    write_density_ppm(os, r.finals, cfg.grid_lo, cfg.grid_hi, kHeatmapResolution);
  });
  out.write("summary.csv", [&](std::ostream& os) {
    std::int64_t total_cost = 0, total_iters = 0;
    for (auto c : r.costs) total_cost += c;
    for (auto k : r.iterations_run) total_iters += k;
    os << "points,iterations,total_cost,nll\n";
    os << r.finals.size() << ',' << total_iters << ',' << total_cost << ',' << num(nll(r.finals, *ex.mixture, ex.cls))
       << '\n';
  });
  return out.finish(cfg);
}

RunReport run_landscape(const ExperimentConfig& cfg, int threads) {
  const Experiment ex = build_experiment(cfg);
  const Method method = estimator_method(cfg);
  const AscentEstimator est = make_ascent_estimator(method, ex.context(), cfg.method.lambda, cfg.method.n_mc,
                                                    cfg.method.stable, cfg.method.kernel_form, cfg.method.noise_draw);
  const LandscapeGrid grid =
      landscape(est, cfg.grid_lo, cfg.grid_hi, cfg.landscape_resolution, cfg.landscape_n_mc, cfg.seed, threads);
  const double separation = cfg.landscape_separation > 0.0 ? cfg.landscape_separation : 2.0 * grid.cell();
  const std::vector<Vec2> maxima = find_local_maxima(grid, separation);
  const std::vector<Vec2> modes = find_modes(smoothed(*ex.mixture, cfg.method.lambda), ex.cls);
  OutputDir out(resolve_output_dir(cfg, "landscape"), "landscape");
  out.write("landscape.csv", [&](std::ostream& os) { write_landscape_csv(os, grid); });
  out.write("potential.ppm", [&](std::ostream& os) {
    write_heatmap_ppm(os, grid.potential, grid.resolution, grid.resolution);
  });
  out.write("maxima.csv", [&](std::ostream& os) {
    os << "x,y,potential,nearest_mode_distance,nearest_mode_cells\n";
    for (const auto& m : maxima) {
      const int i = std::clamp(static_cast<int>(std::floor((m.x - grid.lo) / grid.cell())), 0, grid.resolution - 1);
      const int j = std::clamp(static_cast<int>(std::floor((m.y - grid.lo) / grid.cell())), 0, grid.resolution - 1);
      const double d = nearest_distance(m, modes);
      os << num(m.x) << ',' << num(m.y) << ',' << num(grid.potential[static_cast<std::size_t>(j) * grid.resolution + i])
         << ',' << num(d) << ',' << num(d / grid.cell()) << '\n';
    }
  });
  out.write("modes.csv", [&](std::ostream& os) { write_points_csv(os, modes); });
  out.write("summary.csv", [&](std::ostream& os) {
    os << "resolution,cell,residual,maxima,modes\n";
    os << grid.resolution << ',' << num(grid.cell()) << ',' << num(grid.residual) << ',' << maxima.size() << ','
       << modes.size() << '\n';
  });
  return out.finish(cfg);
}

MetricsReport evaluate_points(const ExperimentConfig& cfg, const Experiment& ex, std::span<const Vec2> points,
                              int threads) {
  if (points.empty()) throw std::invalid_argument("no points to evaluate");
  const Dataset reference = sample(ex.mixture, static_cast<std::size_t>(cfg.metrics_reference_size),
                                   stream_seed(cfg.seed, kReferenceStream), ex.cls, SampleDraw::iid);
  MetricsReport m;
  m.nll = nll(points, *ex.mixture, ex.cls);
  m.mmd = mmd(points, reference.points, cfg.metrics_bandwidth);
  const PrecisionRecall pr = precision_recall(points, reference.points, cfg.metrics_k);
  m.precision = pr.precision;
  m.recall = pr.recall;
  m.efficiency_log10 = cfg.method.name == "ddim"
                           ? std::numeric_limits<double>::quiet_NaN()
                           : efficiency_for(cfg, ex, parse_method(cfg.method.name), threads).log10_efficiency;
  return m;
}

RunReport run_metrics(const ExperimentConfig& cfg, int threads) {
  const Experiment ex = build_experiment(cfg);
  OutputDir out(resolve_output_dir(cfg, "metrics"), "metrics");
  std::vector<Vec2> points;
  if (!cfg.metrics_points.empty()) {
    std::ifstream in(cfg.metrics_points, std::ios::binary);
    if (!in) throw ConfigError("metrics.points: cannot open '" + cfg.metrics_points + "'");
    points = read_points_csv(in);
  } else if (cfg.method.name == "ddim") {
    points = ddim_samples(cfg, ex, threads);
    out.write("samples.csv", [&](std::ostream& os) { write_points_csv(os, points); });
  } else {
    points = distill(cfg, ex, threads).finals;
    out.write("final_points.csv", [&](std::ostream& os) { write_points_csv(os, points); });
  }
  const MetricsReport m = evaluate_points(cfg, ex, points, threads);
  const std::string variant = cfg.method.name == "msd" ? (cfg.method.stable ? "stable" : "naive") : "";
  out.append("results.csv", "method,variant,dataset,denoiser,class,guidance,nll,mmd,precision,recall,efficiency_log10",
             cfg.method.name + ',' + variant + ',' + cfg.dataset.name + ',' + cfg.denoiser.kind + ',' + cfg.class_name +
                 ',' + std::string(to_string(cfg.guidance_mode)) + ',' + num(m.nll) + ',' + num(m.mmd) + ',' +
                 num(m.precision) + ',' + num(m.recall) + ',' + num(m.efficiency_log10));
  return out.finish(cfg);
}

RunReport run_efficiency(const ExperimentConfig& cfg, int threads) {
  cfg.validate();
  std::vector<std::string> rows;
  for (const auto& name : split_list(cfg.efficiency_datasets)) {
    ExperimentConfig c = cfg;
    c.dataset.name = name;
    const auto mixture = build_mixture(c.dataset);
    if (!mixture->conditional()) c.class_name.clear();
    const Experiment ex = build_experiment(c);
    for (const auto& mname : split_list(cfg.efficiency_methods)) {
      const EfficiencyResult r = efficiency_for(c, ex, parse_method(mname), threads);
      rows.push_back(name + ',' + cfg.denoiser.kind + ',' + mname + ',' + num(r.log10_efficiency) + ',' + num(r.mse) +
                     ',' + num(r.cost) + ',' + std::to_string(r.probes_used));
    }
  }
  OutputDir out(resolve_output_dir(cfg, "efficiency"), "efficiency");
  out.write("efficiency.csv", [&](std::ostream& os) {
    os << "dataset,denoiser,method,log10_efficiency,mse,cost,probes\n";
    for (const auto& r : rows) os << r << '\n';
  });
  return out.finish(cfg);
}

RunReport run_command(std::string_view command, const ExperimentConfig& cfg, int threads) {
  if (command == "sample") return run_sample(cfg, threads);
  if (command == "distill") return run_distill(cfg, threads);
  if (command == "landscape") return run_landscape(cfg, threads);
  if (command == "metrics") return run_metrics(cfg, threads);
  if (command == "efficiency") return run_efficiency(cfg, threads);
  throw ConfigError("unknown command: " + std::string(command));
}

}  // namespace msd

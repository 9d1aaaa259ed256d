#include "msd/config.hpp"
#include "msd/format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "msd/error.hpp"

namespace msd {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("invalid number for " + std::string(key) + ": '" + std::string(v) + "'");
  return out;
}

template <class Int>
Int to_int(std::string_view key, std::string_view v) {
  Int out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(v) + "'");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + std::string(key) + ": '" + std::string(v) + "'");
}

std::string fmt(double v) { return format_double(v); }

template <class Int>
std::string fmt_int(Int v) {
  return std::to_string(v);
}

template <class F>
auto wrap(std::string_view key, F&& parse) {
  try {
    return parse();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("invalid value for " + std::string(key) + ": " + e.what());
  }
}

struct Field {
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
Field real(M member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { member(c) = to_double(k, v); },
          [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class Int, class M>
Field integer(M member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { member(c) = to_int<Int>(k, v); },
          [member](const ExperimentConfig& c) { return fmt_int(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class M>
Field text(M member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) {
            const std::string t = trim(v);
            if (t.find_first_of("#\n") != std::string::npos)
              throw ConfigError("value for " + std::string(k) + " may not contain '#' or a newline");
            member(c) = t;
          },
          [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); }};
}

template <class M>
Field boolean(M member) {
  return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { member(c) = to_bool(k, v); },
          [member](const ExperimentConfig& c) {
            return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <class M, class P>
Field enumerated(M member, P parse) {
  return {[member, parse](ExperimentConfig& c, std::string_view k, std::string_view v) {
            member(c) = wrap(k, [&] { return parse(v); });
          },
          [member](const ExperimentConfig& c) { return std::string(to_string(member(const_cast<ExperimentConfig&>(c)))); }};
}

#define M(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      {"bandwidth.lambda0", real(M(bandwidth.lambda0))},
      {"bandwidth.lambda_min", real(M(bandwidth.lambda_min))},
      {"bandwidth.mode", enumerated(M(bandwidth.mode), parse_anneal_mode)},
      {"bandwidth.total_steps", integer<std::int64_t>(M(bandwidth.total_steps))},
      {"class", text(M(class_name))},
      {"dataset.draw", enumerated(M(dataset.draw), parse_sample_draw)},
      {"dataset.fractal.anisotropy", real(M(dataset.fractal_anisotropy))},
      {"dataset.fractal.branch", integer<int>(M(dataset.fractal_branch))},
      {"dataset.fractal.depth", integer<int>(M(dataset.fractal_depth))},
      {"dataset.fractal.seed", integer<std::uint64_t>(M(dataset.fractal_seed))},
      {"dataset.gaussian.mean_x", real(M(dataset.gaussian_mean.x))},
      {"dataset.gaussian.mean_y", real(M(dataset.gaussian_mean.y))},
      {"dataset.gaussian.sd", real(M(dataset.gaussian_sd))},
      {"dataset.mixture_path", text(M(dataset.mixture_path))},
      {"dataset.name", text(M(dataset.name))},
      {"dataset.pinwheel.blades", integer<int>(M(dataset.pinwheel_blades))},
      {"dataset.pinwheel.per_blade", integer<int>(M(dataset.pinwheel_per_blade))},
      {"dataset.pinwheel.twist", real(M(dataset.pinwheel_twist))},
      {"dataset.seed", integer<std::uint64_t>(M(dataset.seed))},
      {"dataset.size", integer<std::int64_t>(M(dataset.size))},
      {"dataset.spiral.components", integer<int>(M(dataset.spiral_components))},
      {"dataset.spiral.noise", real(M(dataset.spiral_noise))},
      {"dataset.spiral.turns", real(M(dataset.spiral_turns))},
      {"denoiser.kind", text(M(denoiser.kind))},
      {"denoiser.weights", text(M(denoiser.weights))},
      {"efficiency.datasets", text(M(efficiency_datasets))},
      {"efficiency.methods", text(M(efficiency_methods))},
      {"efficiency.probes", integer<int>(M(efficiency_probes))},
      {"efficiency.trials", integer<int>(M(efficiency_trials))},
      {"grid.hi", real(M(grid_hi))},
      {"grid.lo", real(M(grid_lo))},
      {"grid.n", integer<int>(M(grid_n))},
      {"guidance.mode", enumerated(M(guidance_mode), parse_guidance_mode)},
      {"guidance.scale", real(M(guidance_scale))},
      {"landscape.n_mc", integer<int>(M(landscape_n_mc))},
      {"landscape.resolution", integer<int>(M(landscape_resolution))},
      {"landscape.separation", real(M(landscape_separation))},
      {"method.kernel_form", enumerated(M(method.kernel_form), parse_kernel_form)},
      {"method.lambda", real(M(method.lambda))},
      {"method.n_mc", integer<int>(M(method.n_mc))},
      {"method.name", text(M(method.name))},
      {"method.noise_draw", enumerated(M(method.noise_draw), parse_noise_draw)},
      {"method.stable", boolean(M(method.stable))},
      {"metrics.bandwidth", real(M(metrics_bandwidth))},
      {"metrics.k", integer<int>(M(metrics_k))},
      {"metrics.points", text(M(metrics_points))},
      {"metrics.reference_size", integer<std::int64_t>(M(metrics_reference_size))},
      {"optimizer.beta1", real(M(optimizer.beta1))},
      {"optimizer.beta2", real(M(optimizer.beta2))},
      {"optimizer.eps", real(M(optimizer.eps_hat))},
      {"optimizer.iterations", integer<std::int64_t>(M(iterations))},
      {"optimizer.lr", real(M(optimizer.lr))},
      {"output.dir", text(M(output_dir))},
      {"sample.count", integer<std::int64_t>(M(sample_count))},
      {"schedule.kind", enumerated(M(schedule.kind), parse_schedule_kind)},
      {"schedule.sigma_max", real(M(schedule.sigma_max))},
      {"schedule.sigma_min", real(M(schedule.sigma_min))},
      {"schedule.steps", integer<std::int64_t>(M(schedule.steps))},
      {"seed", integer<std::uint64_t>(M(seed))},
  };
  return table;
}

#undef M

const Field& field(std::string_view key) {
  const auto& t = fields();
  const auto it = t.find(key);
  if (it == t.end()) throw ConfigError("unknown config key: " + std::string(key));
  return it->second;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

bool known_dataset(const std::string& n) {
  return n == "spiral" || n == "pinwheel" || n == "fractal" || n == "gaussian" || n == "mixture";
}

}  // namespace

void ExperimentConfig::validate() const {
  require(known_dataset(dataset.name), "dataset.name", "unknown dataset '" + dataset.name + "'");
  if (dataset.name == "mixture")
    require(std::filesystem::exists(dataset.mixture_path), "dataset.mixture_path",
            "file not found: '" + dataset.mixture_path + "'");
  require(dataset.size >= 1, "dataset.size", "must be >= 1");
  require(dataset.spiral_components >= 1, "dataset.spiral.components", "must be >= 1");
  require(dataset.spiral_turns > 0.0, "dataset.spiral.turns", "must be positive");
  require(dataset.spiral_noise > 0.0, "dataset.spiral.noise", "must be positive");
  require(dataset.pinwheel_blades >= 1, "dataset.pinwheel.blades", "must be >= 1");
  require(dataset.pinwheel_per_blade >= 1, "dataset.pinwheel.per_blade", "must be >= 1");
  require(dataset.fractal_depth >= 1, "dataset.fractal.depth", "must be >= 1");
  require(dataset.fractal_branch >= 1, "dataset.fractal.branch", "must be >= 1");
  require(dataset.fractal_anisotropy >= 1.0, "dataset.fractal.anisotropy", "must be >= 1");
  require(dataset.gaussian_sd > 0.0, "dataset.gaussian.sd", "must be positive");
  require(denoiser.kind == "ideal" || denoiser.kind == "learned", "denoiser.kind", "must be ideal or learned");
  if (denoiser.kind == "learned")
    require(std::filesystem::exists(denoiser.weights), "denoiser.weights", "file not found: '" + denoiser.weights + "'");
  require(guidance_scale >= 0.0, "guidance.scale", "must be >= 0");
  require(schedule.steps >= 2, "schedule.steps", "must be >= 2");
  require(schedule.sigma_min > 0.0, "schedule.sigma_min", "must be positive");
  require(schedule.sigma_max == 0.0 || schedule.sigma_max > schedule.sigma_min, "schedule.sigma_max",
          "must be 0 (auto) or exceed sigma_min");
  require(method.name == "ddim" || method.name == "sds" || method.name == "sdi" || method.name == "msd", "method.name",
          "must be ddim, sds, sdi or msd");
  require(method.n_mc >= 1, "method.n_mc", "must be >= 1");
  require(method.lambda > 0.0, "method.lambda", "must be positive");
  require(optimizer.lr > 0.0, "optimizer.lr", "must be positive");
  require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
  require(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
  require(optimizer.eps_hat > 0.0, "optimizer.eps", "must be positive");
  require(iterations >= 0, "optimizer.iterations", "must be >= 0");
  try {
    bandwidth.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bandwidth: ") + e.what());
  }
  require(grid_n >= 1, "grid.n", "grid must contain at least one point");
  require(grid_lo < grid_hi, "grid.lo", "must be below grid.hi");
  require(landscape_resolution >= 2, "landscape.resolution", "must be >= 2");
  require(landscape_n_mc >= 1, "landscape.n_mc", "must be >= 1");
  require(landscape_separation >= 0.0, "landscape.separation", "must be >= 0");
  require(sample_count >= 1, "sample.count", "must be >= 1");
  require(metrics_k >= 1, "metrics.k", "must be >= 1");
  require(metrics_bandwidth >= 0.0, "metrics.bandwidth", "must be >= 0");
  require(metrics_reference_size >= 1, "metrics.reference_size", "must be >= 1");
  if (!metrics_points.empty())
    require(std::filesystem::exists(metrics_points), "metrics.points", "file not found: '" + metrics_points + "'");
  require(efficiency_probes >= 1, "efficiency.probes", "must be >= 1");
  require(efficiency_trials >= 30, "efficiency.trials", "must be >= 30");
  const auto methods = split_list(efficiency_methods);
  require(!methods.empty(), "efficiency.methods", "must name at least one method");
  for (const auto& m : methods) wrap("efficiency.methods", [&] { return parse_method(m); });
  const auto sets = split_list(efficiency_datasets);
  require(!sets.empty(), "efficiency.datasets", "must name at least one dataset");
  for (const auto& d : sets) require(known_dataset(d) && d != "mixture", "efficiency.datasets", "unknown dataset '" + d + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  field(key).set(cfg, key, value);
}

std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) { return field(key).get(cfg); }

ExperimentConfig parse_config(std::string_view text, ExperimentConfig cfg) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

ClassIndex resolve_class(const std::string& class_name, const GaussianMixture* gmm) {
  if (class_name.empty()) return std::nullopt;
  int cls = -1;
  if (class_name == "blue") {
    cls = 0;
  } else if (class_name == "orange") {
    cls = 1;
  } else {
    cls = to_int<int>("class", class_name);
  }
  if (gmm) {
    try {
      gmm->check_class(cls);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("class: ") + e.what());
    }
  }
  return cls;
}

}  // namespace msd

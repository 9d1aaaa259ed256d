#include "msd/gmm.hpp"
#include "msd/format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "msd/rng.hpp"

namespace msd {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

std::string csv_double(double v) { return format_double(v); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components) : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
  double total = 0.0;
  bool any_label = false;
  bool all_label = true;
  for (const auto& c : components_) {
    if (!(c.weight > 0.0)) throw std::invalid_argument("component weights must be positive");
    double lo = 0.0, hi = 0.0;
    c.covariance.eigenvalues(lo, hi);
    if (!(lo > 0.0) || !is_finite(c.mean)) throw std::invalid_argument("covariance must be positive definite");
    total += c.weight;
    any_label = any_label || c.label >= 0;
    all_label = all_label && c.label >= 0;
    num_classes_ = std::max(num_classes_, c.label + 1);
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("component weights must sum to 1");
  if (any_label && !all_label) throw std::invalid_argument("labels must be given for all components or none");
  for (int k = 0; k < num_classes_; ++k)
    if (!(class_prior(k) > 0.0)) throw std::invalid_argument("class labels must be contiguous from 0");

  cache_.reserve(components_.size());
  for (const auto& c : components_) {
    cache_.push_back({c.covariance.inverse(), std::log(c.weight) - kLog2Pi - 0.5 * std::log(c.covariance.det())});
  }
}

double GaussianMixture::class_prior(int label) const {
  double p = 0.0;
  for (const auto& c : components_)
    if (c.label == label) p += c.weight;
  return p;
}

void GaussianMixture::check_class(ClassIndex cls) const {
  if (!cls) return;
  if (*cls < 0 || *cls >= num_classes_) throw std::invalid_argument("unknown class index " + std::to_string(*cls));
}

template <class F>
void GaussianMixture::for_each_term(const Vec2& x, ClassIndex cls, F&& f) const {
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    if (cls && c.label != *cls) continue;
    const Vec2 d = x - c.mean;
    f(i, cache_[i].log_norm - 0.5 * cache_[i].precision.quad(d), d);
  }
}

double GaussianMixture::log_density(const Vec2& x, ClassIndex cls) const {
  check_class(cls);
  if (!is_finite(x)) throw std::invalid_argument("non-finite query point");
  double max_term = -std::numeric_limits<double>::infinity();
  for_each_term(x, cls, [&](std::size_t, double t, const Vec2&) { max_term = std::max(max_term, t); });
  double sum = 0.0;
  for_each_term(x, cls, [&](std::size_t, double t, const Vec2&) { sum += std::exp(t - max_term); });
  double lp = max_term + std::log(sum);
  if (cls) lp -= std::log(class_prior(*cls));
  return lp;
}

double GaussianMixture::density(const Vec2& x, ClassIndex cls) const { return std::exp(log_density(x, cls)); }

Vec2 GaussianMixture::score(const Vec2& x, ClassIndex cls) const {
  check_class(cls);
  if (!is_finite(x)) throw std::invalid_argument("non-finite query point");
  double max_term = -std::numeric_limits<double>::infinity();
  for_each_term(x, cls, [&](std::size_t, double t, const Vec2&) { max_term = std::max(max_term, t); });
  double sum = 0.0;
  Vec2 acc;
  for_each_term(x, cls, [&](std::size_t i, double t, const Vec2& d) {
    const double r = std::exp(t - max_term);
    sum += r;
    acc -= r * cache_[i].precision.apply(d);
  });
  return acc / sum;
}

Vec2 GaussianMixture::density_gradient(const Vec2& x, ClassIndex cls) const {
  return density(x, cls) * score(x, cls);
}

std::vector<Vec2> Dataset::select(ClassIndex cls) const {
  if (!cls) return points;
  if (!labeled()) throw std::invalid_argument("dataset has no labels");
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (labels[i] == *cls) out.push_back(points[i]);
  if (out.empty()) throw std::invalid_argument("unknown class index " + std::to_string(*cls));
  return out;
}

// --- builders -------------------------------------------------------------

namespace {

struct Branch {
  Vec2 start;
  double angle;
  double length;
};

Vec2 direction(double angle) { return {std::cos(angle), std::sin(angle)}; }

void grow(const Branch& b, int levels_left, int branch_factor, double anisotropy, Rng& rng, int label,
          std::vector<GaussianComponent>& out) {
  if (levels_left == 0) {
    const Vec2 center = b.start + 0.5 * b.length * direction(b.angle);
    const double along = 0.25 * b.length;
    out.push_back({0.0, center, oriented_covariance(b.angle, along, along / anisotropy), label});
    return;
  }
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double spread = (35.0 + rng.uniform(-10.0, 10.0)) * kDeg;
  const Vec2 tip = b.start + b.length * direction(b.angle);
  for (int j = 0; j < branch_factor; ++j) {
    const double frac = branch_factor == 1 ? 0.0 : -1.0 + 2.0 * j / (branch_factor - 1);
    grow({tip, b.angle + frac * spread, 0.55 * b.length}, levels_left - 1, branch_factor, anisotropy, rng, label,
         out);
  }
}

/// Affinely fits all means +- 3 sd into [-half, half]^2, preserving aspect.
void fit_into_box(std::vector<GaussianComponent>& comps, double half) {
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& c : comps) {
    const double sx = 3.0 * std::sqrt(c.covariance.xx);
    const double sy = 3.0 * std::sqrt(c.covariance.yy);
    lo_x = std::min(lo_x, c.mean.x - sx);
    hi_x = std::max(hi_x, c.mean.x + sx);
    lo_y = std::min(lo_y, c.mean.y - sy);
    hi_y = std::max(hi_y, c.mean.y + sy);
  }
  const Vec2 mid{0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y)};
  const double scale = 2.0 * half / std::max(hi_x - lo_x, hi_y - lo_y);
  for (auto& c : comps) {
    c.mean = (c.mean - mid) * scale;
    c.covariance = (scale * scale) * c.covariance;
  }
}

}  // namespace

GaussianMixture build_fractal(int depth, int branch_factor, double anisotropy, std::uint64_t seed) {
  if (depth < 1 || branch_factor < 2 || !(anisotropy >= 1.0))
    throw std::invalid_argument("fractal requires depth >= 1, branch_factor >= 2, anisotropy >= 1");
  constexpr double kDeg = std::numbers::pi / 180.0;
  Rng rng(seed);
  std::vector<GaussianComponent> comps;
  const Branch roots[2] = {{{0.0, -1.0}, 120.0 * kDeg, 1.0}, {{0.0, -1.0}, 60.0 * kDeg, 1.0}};
  for (int label = 0; label < 2; ++label) {
    const std::size_t first = comps.size();
    grow(roots[label], depth - 1, branch_factor, anisotropy, rng, label, comps);
    const double w = 0.5 / static_cast<double>(comps.size() - first);
    for (std::size_t i = first; i < comps.size(); ++i) comps[i].weight = w;
  }
  fit_into_box(comps, 1.2);
  return GaussianMixture(std::move(comps));
}

GaussianMixture build_spiral(int num_components, double turns, double noise) {
  if (num_components < 1 || !(turns > 0.0) || !(noise > 0.0))
    throw std::invalid_argument("spiral requires positive component count, turns and noise");
  constexpr double kRadius = 1.3;
  const double theta_max = 2.0 * std::numbers::pi * turns;
  const double a = kRadius / theta_max;
  std::vector<GaussianComponent> comps;
  const double w = 1.0 / num_components;
  for (int i = 0; i < num_components; ++i) {
    // theta ~ sqrt(arc length) keeps components evenly spaced along the curve.
    const double s = num_components == 1 ? 0.0 : static_cast<double>(i) / (num_components - 1);
    const double theta = theta_max * std::sqrt(s);
    const double r = a * theta;
    comps.push_back({w, {r * std::cos(theta), r * std::sin(theta)}, Sym2::identity(noise * noise), -1});
  }
  return GaussianMixture(std::move(comps));
}

GaussianMixture build_pinwheel(int num_blades, int points_per_blade, double twist) {
  if (num_blades < 1 || points_per_blade < 1 || !std::isfinite(twist))
    throw std::invalid_argument("pinwheel requires positive blade and point counts");
  constexpr double kInner = 0.3, kOuter = 1.2, kTangential = 0.04;
  std::vector<GaussianComponent> comps;
  const double w = 1.0 / (num_blades * points_per_blade);
  const double slot = (kOuter - kInner) / points_per_blade;
  const double radial_sd = points_per_blade == 1 ? 0.25 : std::max(0.6 * slot, kTangential);
  for (int b = 0; b < num_blades; ++b) {
    const double base = 2.0 * std::numbers::pi * b / num_blades;
    for (int j = 0; j < points_per_blade; ++j) {
      const double r = points_per_blade == 1 ? 0.5 * (kInner + kOuter) : kInner + (j + 0.5) * slot;
      const double phi = base + twist * r;
      comps.push_back({w, r * direction(phi), oriented_covariance(phi, radial_sd, kTangential), -1});
    }
  }
  return GaussianMixture(std::move(comps));
}

std::string_view to_string(SampleDraw d) { return d == SampleDraw::iid ? "iid" : "stratified"; }

SampleDraw parse_sample_draw(std::string_view name) {
  if (name == "iid") return SampleDraw::iid;
  if (name == "stratified") return SampleDraw::stratified;
  throw std::invalid_argument("unknown sample draw: " + std::string(name));
}

namespace {

Vec2 transform(const GaussianComponent& c, const Vec2& e) {
  const double l11 = std::sqrt(c.covariance.xx);
  const double l21 = c.covariance.xy / l11;
  const double l22 = std::sqrt(std::max(0.0, c.covariance.yy - l21 * l21));
  return c.mean + Vec2{l11 * e.x, l21 * e.x + l22 * e.y};
}

}  // namespace

Dataset sample(std::shared_ptr<const GaussianMixture> gmm, std::size_t n, std::uint64_t seed, ClassIndex cls,
               SampleDraw draw) {
  if (!gmm) throw std::invalid_argument("null mixture");
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  gmm->check_class(cls);
  const auto& comps = gmm->components();
  std::vector<double> cdf;
  std::vector<std::size_t> ids;
  double acc = 0.0;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (cls && comps[i].label != *cls) continue;
    acc += comps[i].weight;
    cdf.push_back(acc);
    ids.push_back(i);
  }
  Dataset out;
  out.points.reserve(n);
  out.source = gmm;
  out.seed = seed;
  if (draw == SampleDraw::stratified) {
    std::vector<std::size_t> counts(ids.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const double exact = comps[ids[j]].weight / acc * static_cast<double>(n);
      counts[j] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[j];
      remainders.push_back({exact - std::floor(exact), j});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) counts[remainders[r].second] += 1;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const auto& c = comps[ids[j]];
      for (const Vec2& e : lattice_normals(counts[j], stream_seed(seed, ids[j]))) {
        out.points.push_back(transform(c, e));
        if (gmm->conditional()) out.labels.push_back(c.label);
      }
    }
    return out;
  }
  Rng rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto& c = comps[ids[std::min<std::size_t>(it - cdf.begin(), ids.size() - 1)]];
    out.points.push_back(transform(c, rng.normal2()));
    if (gmm->conditional()) out.labels.push_back(c.label);
  }
  return out;
}

GaussianMixture smoothed(const GaussianMixture& gmm, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  auto comps = gmm.components();
  const Sym2 extra = Sym2::identity(kernel_variance(lambda));
  for (auto& c : comps) c.covariance = c.covariance + extra;
  return GaussianMixture(std::move(comps));
}

// --- CSV ------------------------------------------------------------------

void write_mixture_csv(std::ostream& os, const GaussianMixture& gmm) {
  os << "weight,mean_x,mean_y,cov_xx,cov_xy,cov_yy,label\n";
  for (const auto& c : gmm.components()) {
    os << csv_double(c.weight) << ',' << csv_double(c.mean.x) << ',' << csv_double(c.mean.y) << ','
       << csv_double(c.covariance.xx) << ',' << csv_double(c.covariance.xy) << ',' << csv_double(c.covariance.yy)
       << ',' << c.label << '\n';
  }
}

GaussianMixture read_mixture_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty mixture csv");
  std::vector<GaussianComponent> comps;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 7) throw std::invalid_argument("mixture csv row needs 7 columns: " + line);
    comps.push_back({std::stod(cells[0]),
                     {std::stod(cells[1]), std::stod(cells[2])},
                     {std::stod(cells[3]), std::stod(cells[4]), std::stod(cells[5])},
                     std::stoi(cells[6])});
  }
  return GaussianMixture(std::move(comps));
}

void write_dataset_csv(std::ostream& os, const Dataset& data) {
  os << "x,y,label\n";
  for (std::size_t i = 0; i < data.points.size(); ++i) {
    os << csv_double(data.points[i].x) << ',' << csv_double(data.points[i].y) << ','
       << (data.labeled() ? data.labels[i] : -1) << '\n';
  }
}

Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty dataset csv");
  Dataset out;
  bool any_label = false;
  std::vector<int> labels;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() < 2) throw std::invalid_argument("dataset csv row needs x,y[,label]: " + line);
    out.points.push_back({std::stod(cells[0]), std::stod(cells[1])});
    const int label = cells.size() > 2 ? std::stoi(cells[2]) : -1;
    any_label = any_label || label >= 0;
    labels.push_back(label);
  }
  if (out.points.empty()) throw std::invalid_argument("dataset csv has no rows");
  if (any_label) out.labels = std::move(labels);
  return out;
}

}  // namespace msd

#include "msd/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "msd/kernel_sum.hpp"
#include "msd/rng.hpp"

namespace msd {

// --- PointIndex -------------------------------------------------------------

namespace {
// Terms whose log-weight is 50 below the largest are skipped (relative mass < 2e-22 each).
constexpr double kTruncation = 100.0;  // in units of sigma^2 on the squared distance
}  // namespace

PointIndex::PointIndex(std::vector<Vec2> points) {
  if (points.empty()) throw std::invalid_argument("point set must be nonempty");
  double& hi_x = hi_x_;
  double& hi_y = hi_y_;
  hi_x = hi_y = -std::numeric_limits<double>::infinity();
  lo_x_ = lo_y_ = std::numeric_limits<double>::infinity();
  Vec2 sum;
  for (const auto& p : points) {
    if (!is_finite(p)) throw std::invalid_argument("non-finite data point");
    lo_x_ = std::min(lo_x_, p.x);
    lo_y_ = std::min(lo_y_, p.y);
    hi_x = std::max(hi_x, p.x);
    hi_y = std::max(hi_y, p.y);
    sum += p;
  }
  mean_ = sum / static_cast<double>(points.size());
  const double extent = std::max({hi_x - lo_x_, hi_y - lo_y_, 1e-9});
  const int dims = std::clamp(static_cast<int>(std::ceil(std::sqrt(points.size() / 2.0))), 1, 256);
  cell_ = extent * (1.0 + 1e-9) / dims;
  nx_ = std::max(1, static_cast<int>(std::ceil((hi_x - lo_x_) / cell_ + 1e-12)));
  ny_ = std::max(1, static_cast<int>(std::ceil((hi_y - lo_y_) / cell_ + 1e-12)));
  brute_sigma_ = 0.15 * extent;

  std::vector<std::uint32_t> offsets(static_cast<std::size_t>(nx_) * ny_ + 1, 0);
  std::vector<std::uint32_t> cell_of(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    cell_of[i] = static_cast<std::uint32_t>(cell_y(points[i].y) * nx_ + cell_x(points[i].x));
    ++offsets[cell_of[i] + 1];
  }
  for (std::size_t c = 1; c < offsets.size(); ++c) offsets[c] += offsets[c - 1];
  cell_start_ = offsets;
  xs_.resize(points.size());
  ys_.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::uint32_t slot = offsets[cell_of[i]]++;
    xs_[slot] = points[i].x;
    ys_[slot] = points[i].y;
  }
}

int PointIndex::cell_x(double x) const {
  return static_cast<int>(std::clamp(std::floor((x - lo_x_) / cell_), 0.0, static_cast<double>(nx_ - 1)));
}
int PointIndex::cell_y(double y) const {
  return static_cast<int>(std::clamp(std::floor((y - lo_y_) / cell_), 0.0, static_cast<double>(ny_ - 1)));
}

double PointIndex::nearest_distance2(const Vec2& z) const {
  const int cx = cell_x(z.x), cy = cell_y(z.y);
  auto gap = [](double v, double lo, double hi) { return v < lo ? lo - v : (v > hi ? v - hi : 0.0); };
  auto gap_col = [&](int i) { return gap(z.x, lo_x_ + i * cell_, lo_x_ + (i + 1) * cell_); };
  auto gap_row = [&](int j) { return gap(z.y, lo_y_ + j * cell_, lo_y_ + (j + 1) * cell_); };
  double best = std::numeric_limits<double>::infinity();
  auto scan = [&](int i, int j) {
    if (i < 0 || j < 0 || i >= nx_ || j >= ny_) return;
    const std::size_t c = static_cast<std::size_t>(j) * nx_ + i;
    for (std::uint32_t k = cell_start_[c]; k < cell_start_[c + 1]; ++k) {
      const double dx = xs_[k] - z.x, dy = ys_[k] - z.y;
      best = std::min(best, dx * dx + dy * dy);
    }
  };
  const int max_r = std::max({cx, nx_ - 1 - cx, cy, ny_ - 1 - cy});
  scan(cx, cy);
  for (int r = 1; r <= max_r; ++r) {
    const double lb = std::min({gap_col(cx - r), gap_col(cx + r), gap_row(cy - r), gap_row(cy + r)});
    if (lb * lb > best) break;
    for (int i = cx - r; i <= cx + r; ++i) {
      scan(i, cy - r);
      scan(i, cy + r);
    }
    for (int j = cy - r + 1; j <= cy + r - 1; ++j) {
      scan(cx - r, j);
      scan(cx + r, j);
    }
  }
  return best;
}

Vec2 PointIndex::brute_force(const Vec2& z, double sigma) const {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const WeightedSum s = gaussian_weighted_sum(xs_.data(), ys_.data(), xs_.size(), z.x, z.y, nearest_distance2(z), inv);
  return finish(s.weight, s.x, s.y, z, sigma);
}

Vec2 PointIndex::precise(const Vec2& z, double sigma) const {
  std::size_t nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < xs_.size(); ++i) {
    const double d = norm2(point(i) - z);
    if (d < best) {
      best = d;
      nearest = i;
    }
  }
  // |u_i - z|^2 - |u_n - z|^2 = (u_i - u_n) . (u_i + u_n - 2 z), free of cancellation in |z|.
  const Vec2 un = point(nearest);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double sw = 0.0;
  Vec2 acc;
  for (std::size_t i = 0; i < xs_.size(); ++i) {
    const Vec2 u = point(i);
    const double w = std::exp(-std::max(0.0, dot(u - un, u + un - 2.0 * z)) * inv);
    sw += w;
    acc += w * (u - un);
  }
  return un + acc / sw;
}

Vec2 PointIndex::finish(double weight, double sx, double sy, const Vec2& z, double sigma) const {
  const Vec2 m = weight >= 0.5 && std::isfinite(weight) ? Vec2{sx / weight, sy / weight} : precise(z, sigma);
  return {std::clamp(m.x, lo_x_, hi_x_), std::clamp(m.y, lo_y_, hi_y_)};
}

Vec2 PointIndex::weighted_mean(const Vec2& z, double sigma) const {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (!is_finite(z)) throw std::invalid_argument("non-finite query point");
  if (sigma >= brute_sigma_ || xs_.size() < 64) return brute_force(z, sigma);
  const double d2min = nearest_distance2(z);
  const double r = std::sqrt(d2min + kTruncation * sigma * sigma);
  const int ix0 = cell_x(z.x - r), ix1 = cell_x(z.x + r);
  const int iy0 = cell_y(z.y - r), iy1 = cell_y(z.y + r);
  if (static_cast<long>(ix1 - ix0 + 1) * (iy1 - iy0 + 1) * 2 > static_cast<long>(nx_) * ny_)
    return brute_force(z, sigma);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  WeightedSum acc;
  for (int j = iy0; j <= iy1; ++j) {
    const std::size_t first = cell_start_[static_cast<std::size_t>(j) * nx_ + ix0];
    const std::size_t last = cell_start_[static_cast<std::size_t>(j) * nx_ + ix1 + 1];
    acc += gaussian_weighted_sum(xs_.data() + first, ys_.data() + first, last - first, z.x, z.y, d2min, inv);
  }
  return finish(acc.weight, acc.x, acc.y, z, sigma);
}

// --- IdealDenoiser ------------------------------------------------------------

IdealDenoiser::IdealDenoiser(const Dataset& data) : all_(data.points) {
  if (data.labeled()) {
    if (data.labels.size() != data.points.size()) throw std::invalid_argument("labels/points length mismatch");
    const int classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    for (int k = 0; k < classes; ++k) per_class_.emplace_back(data.select(k));
  }
}

const PointIndex& IdealDenoiser::index(ClassIndex cls) const {
  if (!cls) return all_;
  if (*cls < 0 || static_cast<std::size_t>(*cls) >= per_class_.size())
    throw std::invalid_argument("unknown class index " + std::to_string(*cls));
  return per_class_[static_cast<std::size_t>(*cls)];
}

Vec2 IdealDenoiser::denoise(const Vec2& z, double sigma, ClassIndex cls) const {
  return index(cls).weighted_mean(z, sigma);
}

Vec2 ideal_denoise(const IdealDenoiser& d, const Vec2& z, double sigma, ClassIndex cls) {
  return d.denoise(z, sigma, cls);
}

Vec2 mean_shift_iterate(std::span<const Vec2> points, const Vec2& x, double lambda) {
  if (points.empty()) throw std::invalid_argument("mean shift needs points");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  double d2min = std::numeric_limits<double>::infinity();
  for (const auto& u : points) d2min = std::min(d2min, norm2(x - u));
  const double inv = 1.0 / (lambda * lambda);
  double sw = 0.0;
  Vec2 acc;
  for (const auto& u : points) {
    const double g = std::exp(-(norm2(x - u) - d2min) * inv);
    sw += g;
    acc += g * u;
  }
  return acc / sw;
}

Vec2 eps_from_denoised(const Vec2& z, const Vec2& denoised, double alpha, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  return (z - alpha * denoised) / sigma;
}

Vec2 denoised_from_eps(const Vec2& z, const Vec2& eps, double alpha, double sigma) {
  return (z - sigma * eps) / alpha;
}

// --- guidance -----------------------------------------------------------------

std::string_view to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::none: return "none";
    case GuidanceMode::cfg: return "cfg";
    case GuidanceMode::autoguidance: return "autoguidance";
  }
  return "none";
}

GuidanceMode parse_guidance_mode(std::string_view name) {
  if (name == "none") return GuidanceMode::none;
  if (name == "cfg") return GuidanceMode::cfg;
  if (name == "autoguidance") return GuidanceMode::autoguidance;
  throw std::invalid_argument("unknown guidance mode: " + std::string(name));
}

void GuidanceConfig::validate(const Denoiser& primary) const {
  if (!(scale >= 0.0)) throw std::invalid_argument("guidance scale must be >= 0");
  if (mode == GuidanceMode::cfg && !primary.conditional())
    throw std::invalid_argument("cfg requires a class-conditional denoiser");
  if (mode == GuidanceMode::autoguidance && !reference)
    throw std::invalid_argument("autoguidance requires a reference denoiser");
}

Vec2 ModelCall::denoise(const Vec2& z, double sigma, ClassIndex cls) {
  const Vec2 primary = primary_.denoise(z, sigma, cls);
  ++cost_;
  switch (guidance_.mode) {
    case GuidanceMode::none: return primary;
    case GuidanceMode::cfg: {
      if (!cls) throw std::invalid_argument("cfg requires a class");
      const Vec2 uncond = primary_.denoise(z, sigma, std::nullopt);
      ++cost_;
      return (1.0 + guidance_.scale) * primary - guidance_.scale * uncond;
    }
    case GuidanceMode::autoguidance: {
      if (!guidance_.reference) throw std::invalid_argument("autoguidance requires a reference denoiser");
      const Vec2 ref = guidance_.reference->denoise(z, sigma, cls);
      ++cost_;
      return (1.0 + guidance_.scale) * primary - guidance_.scale * ref;
    }
  }
  return primary;
}

Vec2 guided_eps(const GuidanceConfig& g, const Denoiser& primary, const NoiseSchedule& schedule, const Vec2& z,
                std::size_t step, ClassIndex cls) {
  g.validate(primary);
  ModelCall call(primary, g);
  return call.eps(z, noise_at(schedule, step), cls);
}

std::shared_ptr<const Denoiser> make_autoguidance_reference(const Dataset& data, std::uint64_t seed) {
  Dataset sub;
  sub.source = data.source;
  sub.seed = seed;
  Rng rng(seed, 0xa7);
  std::vector<std::size_t> ids(data.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  const std::size_t keep = std::max<std::size_t>(1, data.size() / 10);
  ids.resize(keep);
  std::sort(ids.begin(), ids.end());
  for (std::size_t i : ids) {
    sub.points.push_back(data.points[i]);
    if (data.labeled()) sub.labels.push_back(data.labels[i]);
  }
  // A class can vanish from a tiny subsample; fall back to the full set then.
  if (data.labeled()) {
    const int classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    for (int k = 0; k < classes; ++k)
      if (std::find(sub.labels.begin(), sub.labels.end(), k) == sub.labels.end()) {
        sub = data;
        break;
      }
  }
  return std::make_shared<DegradedDenoiser>(std::make_shared<IdealDenoiser>(sub), 2.0);
}

}  // namespace msd

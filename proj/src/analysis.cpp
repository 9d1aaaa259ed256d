#include "msd/analysis.hpp"
#include "msd/format.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "msd/kernel_sum.hpp"
#include "msd/parallel.hpp"
#include "msd/rng.hpp"

namespace msd {

namespace {

// Neumaier-compensated accumulator.
class Sum {
 public:
  void add(double v) {
    const double t = total_ + v;
    comp_ += std::abs(total_) >= std::abs(v) ? (total_ - t) + v : (v - t) + total_;
    total_ = t;
  }
  double value() const { return total_ + comp_; }

 private:
  double total_ = 0.0;
  double comp_ = 0.0;
};

bool lex_less(const Vec2& a, const Vec2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); }

// Sum over j of exp(-|a_i - b_j|^2 / (2 h^2)) over every i, compensated across rows.
double kernel_total(std::span<const Vec2> a, const std::vector<double>& bx, const std::vector<double>& by, double inv) {
  Sum s;
  for (const auto& p : a) s.add(gaussian_weighted_sum(bx.data(), by.data(), bx.size(), p.x, p.y, 0.0, inv).weight);
  return s.value();
}

}  // namespace

double nll(std::span<const Vec2> points, const GaussianMixture& gmm, ClassIndex cls) {
  if (points.empty()) throw std::invalid_argument("nll needs points");
  Sum s;
  for (const auto& p : points) s.add(-gmm.log_density(p, cls));
  return s.value() / static_cast<double>(points.size());
}

double median_heuristic(std::span<const Vec2> x, std::span<const Vec2> y, std::size_t max_points) {
  std::vector<Vec2> pool(x.begin(), x.end());
  pool.insert(pool.end(), y.begin(), y.end());
  if (pool.size() < 2) throw std::invalid_argument("median heuristic needs two points");
  std::sort(pool.begin(), pool.end(), lex_less);
  if (pool.size() > max_points) {
    std::vector<Vec2> sub;
    sub.reserve(max_points);
    for (std::size_t i = 0; i < max_points; ++i) sub.push_back(pool[i * pool.size() / max_points]);
    pool.swap(sub);
  }
  std::vector<double> d;
  d.reserve(pool.size() * (pool.size() - 1) / 2);
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(norm(pool[i] - pool[j]));
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  const double med = *mid;
  return med > 0.0 ? med : 1.0;
}

double mmd(std::span<const Vec2> x, std::span<const Vec2> y, double bandwidth) {
  if (x.empty() || y.empty()) throw std::invalid_argument("mmd needs nonempty sets");
  const double h = bandwidth > 0.0 ? bandwidth : median_heuristic(x, y);
  const double inv = 1.0 / (2.0 * h * h);
  // Sorting makes the sums independent of input order.
  std::vector<Vec2> xs(x.begin(), x.end()), ys(y.begin(), y.end());
  std::sort(xs.begin(), xs.end(), lex_less);
  std::sort(ys.begin(), ys.end(), lex_less);
  auto split = [](const std::vector<Vec2>& v, std::vector<double>& px, std::vector<double>& py) {
    for (const auto& p : v) {
      px.push_back(p.x);
      py.push_back(p.y);
    }
  };
  std::vector<double> xx, xy, yx, yy;
  split(xs, xx, xy);
  split(ys, yx, yy);
  const double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
  const double kxx = kernel_total(xs, xx, xy, inv) / (nx * nx);
  const double kyy = kernel_total(ys, yx, yy, inv) / (ny * ny);
  const double kxy = kernel_total(xs, yx, yy, inv) / (nx * ny);
  return std::max(0.0, kxx + kyy - 2.0 * kxy);
}

std::vector<double> knn_radii(std::span<const Vec2> points, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  const std::size_t n = points.size();
  std::vector<double> radii(n, 0.0);
  if (n < 2) return radii;
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  std::vector<double> best;
  for (std::size_t i = 0; i < n; ++i) {
    best.assign(kk, std::numeric_limits<double>::infinity());  // ascending
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = norm2(points[i] - points[j]);
      if (d >= best.back()) continue;
      std::size_t pos = kk - 1;
      while (pos > 0 && best[pos - 1] > d) {
        best[pos] = best[pos - 1];
        --pos;
      }
      best[pos] = d;
    }
    radii[i] = std::sqrt(best.back());
  }
  return radii;
}

namespace {

double coverage(std::span<const Vec2> queries, std::span<const Vec2> manifold, const std::vector<double>& radii) {
  std::size_t inside = 0;
  for (const auto& q : queries) {
    for (std::size_t j = 0; j < manifold.size(); ++j) {
      if (norm2(q - manifold[j]) <= radii[j] * radii[j]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(queries.size());
}

}  // namespace

PrecisionRecall precision_recall(std::span<const Vec2> generated, std::span<const Vec2> reference, int k) {
  if (generated.empty() || reference.empty()) throw std::invalid_argument("precision/recall need nonempty sets");
  const auto ref_radii = knn_radii(reference, k);
  const auto gen_radii = knn_radii(generated, k);
  return {coverage(generated, reference, ref_radii), coverage(reference, generated, gen_radii)};
}

EfficiencyResult efficiency(const AscentEstimator& estimator, std::span<const Vec2> probes,
                            const ReferenceGradient& reference, int trials, std::uint64_t seed, int threads) {
  if (trials < 30) throw std::invalid_argument("efficiency needs at least 30 trials per probe");
  if (probes.empty()) throw std::invalid_argument("efficiency needs probes");
  struct ProbeStat {
    bool used = false;
    double mse = 0.0;
    double cost = 0.0;
  };
  std::vector<ProbeStat> stats(probes.size());
  parallel_for(probes.size(), threads, [&](std::size_t p) {
    const Vec2 g = reference(probes[p]);
    if (norm(g) == 0.0) return;
    std::vector<Vec2> est(static_cast<std::size_t>(trials));
    Sum cost, mx, my;
    for (int t = 0; t < trials; ++t) {
      const GradientEstimate e = estimator(probes[p], stream_seed(seed, p, static_cast<std::uint64_t>(t)));
      est[static_cast<std::size_t>(t)] = e.grad;
      cost.add(static_cast<double>(e.cost));
      mx.add(e.grad.x);
      my.add(e.grad.y);
    }
    const Vec2 mean{mx.value() / trials, my.value() / trials};
    if (norm(mean) == 0.0) return;
    const double scale = 1.0 / norm(mean);
    const Vec2 unit = g / norm(g);
    Sum se;
    for (const auto& e : est) se.add(norm2(scale * e - unit));
    stats[p] = {true, se.value() / trials, cost.value() / trials};
  });
  Sum mse, cost;
  EfficiencyResult r;
  for (const auto& s : stats) {
    if (!s.used) continue;
    ++r.probes_used;
    mse.add(s.mse);
    cost.add(s.cost);
  }
  if (r.probes_used == 0) throw std::invalid_argument("no probe had a usable reference and estimate");
  r.mse = mse.value() / static_cast<double>(r.probes_used);
  r.cost = cost.value() / static_cast<double>(r.probes_used);
  if (r.mse <= 0.0) {
    r.log10_efficiency = kEfficiencyCap;
  } else {
    r.log10_efficiency = std::clamp(-std::log10(r.mse * r.cost), -kEfficiencyCap, kEfficiencyCap);
  }
  return r;
}

void reconstruct_potential(LandscapeGrid& grid) {
  const int n = grid.resolution;
  const std::size_t cells = static_cast<std::size_t>(n) * n;
  if (n < 2 || grid.grad_field.size() != cells) throw std::invalid_argument("landscape grid shape mismatch");
  const double h = grid.cell();
  auto id = [n](int i, int j) { return static_cast<int>(j) * n + i; };

  struct Edge {
    int a, b;
    double target;
  };
  std::vector<Edge> edges;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec2& g = grid.grad_field[static_cast<std::size_t>(id(i, j))];
      if (i + 1 < n) edges.push_back({id(i, j), id(i + 1, j), 0.5 * h * (g.x + grid.grad_field[id(i + 1, j)].x)});
      if (j + 1 < n) edges.push_back({id(i, j), id(i, j + 1), 0.5 * h * (g.y + grid.grad_field[id(i, j + 1)].y)});
    }

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
  for (const auto& e : edges) {
    triplets.emplace_back(e.a, e.a, 1.0);
    triplets.emplace_back(e.b, e.b, 1.0);
    triplets.emplace_back(e.a, e.b, -1.0);
    triplets.emplace_back(e.b, e.a, -1.0);
    rhs[e.a] -= e.target;
    rhs[e.b] += e.target;
  }
  triplets.emplace_back(0, 0, 1.0);  // pins the free constant
  Eigen::SparseMatrix<double> lap(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(cells));
  lap.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(1e-13);
  cg.setMaxIterations(20 * static_cast<Eigen::Index>(cells));
  cg.compute(lap);
  const Eigen::VectorXd phi = cg.solve(rhs);
  if (cg.info() != Eigen::Success) throw std::runtime_error("Poisson solve did not converge");

  const double lowest = phi.minCoeff();
  grid.potential.assign(cells, 0.0);
  for (std::size_t c = 0; c < cells; ++c) grid.potential[c] = phi[static_cast<Eigen::Index>(c)] - lowest;
  Sum res;
  for (const auto& e : edges) {
    const double m = (phi[e.b] - phi[e.a] - e.target) / h;
    res.add(m * m);
  }
  grid.residual = res.value() / static_cast<double>(edges.size());
}

LandscapeGrid landscape(const AscentEstimator& estimator, double lo, double hi, int resolution, int n_mc_per_cell,
                        std::uint64_t seed, int threads) {
  if (resolution < 2 || !(lo < hi)) throw std::invalid_argument("landscape needs resolution >= 2 and lo < hi");
  if (n_mc_per_cell < 1) throw std::invalid_argument("n_mc_per_cell must be >= 1");
  LandscapeGrid grid;
  grid.lo = lo;
  grid.hi = hi;
  grid.resolution = resolution;
  const std::size_t cells = static_cast<std::size_t>(resolution) * resolution;
  grid.grad_field.assign(cells, Vec2{});
  parallel_for(cells, threads, [&](std::size_t c) {
    const Vec2 x = grid.centre(static_cast<int>(c % resolution), static_cast<int>(c / resolution));
    Sum sx, sy;
    for (int t = 0; t < n_mc_per_cell; ++t) {
      const Vec2 g = estimator(x, stream_seed(seed, c, static_cast<std::uint64_t>(t))).grad;
      sx.add(g.x);
      sy.add(g.y);
    }
    grid.grad_field[c] = {sx.value() / n_mc_per_cell, sy.value() / n_mc_per_cell};
  });
  reconstruct_potential(grid);
  return grid;
}

LandscapeGrid sample_field(const std::function<Vec2(const Vec2&)>& field, double lo, double hi, int resolution) {
  LandscapeGrid grid;
  grid.lo = lo;
  grid.hi = hi;
  grid.resolution = resolution;
  for (int j = 0; j < resolution; ++j)
    for (int i = 0; i < resolution; ++i) grid.grad_field.push_back(field(grid.centre(i, j)));
  reconstruct_potential(grid);
  return grid;
}

std::vector<Vec2> find_local_maxima(const LandscapeGrid& grid, double min_separation) {
  const int n = grid.resolution;
  if (grid.potential.size() != static_cast<std::size_t>(n) * n) throw std::invalid_argument("grid has no potential");
  auto at = [&](int i, int j) { return grid.potential[static_cast<std::size_t>(j) * n + i]; };
  std::vector<std::pair<double, int>> cand;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const double v = at(i, j);
      bool is_max = true;
      for (int dj = -1; dj <= 1 && is_max; ++dj)
        for (int di = -1; di <= 1; ++di) {
          if ((di == 0 && dj == 0) || i + di < 0 || j + dj < 0 || i + di >= n || j + dj >= n) continue;
          if (!(v > at(i + di, j + dj))) {
            is_max = false;
            break;
          }
        }
      if (is_max) cand.emplace_back(v, j * n + i);
    }
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  std::vector<Vec2> kept;
  for (const auto& [v, c] : cand) {
    const Vec2 p = grid.centre(c % n, c / n);
    if (nearest_distance(p, kept) >= min_separation) kept.push_back(p);
  }
  return kept;
}

namespace {

struct LocalModel {
  double log_density;
  Vec2 score;
  Sym2 hessian;  // of log density
};

LocalModel local_model(const GaussianMixture& gmm, const Vec2& x, ClassIndex cls) {
  const auto& comps = gmm.components();
  std::vector<double> logw;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    if (cls && comps[k].label != *cls) continue;
    const Sym2 prec = comps[k].covariance.inverse();
    const Vec2 d = x - comps[k].mean;
    logw.push_back(std::log(comps[k].weight) - 0.5 * std::log(comps[k].covariance.det()) - 0.5 * prec.quad(d));
    ids.push_back(k);
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  double total = 0.0;
  for (double& l : logw) total += (l = std::exp(l - top));
  Vec2 s;
  Sym2 h{0.0, 0.0, 0.0};
  for (std::size_t m = 0; m < ids.size(); ++m) {
    const double r = logw[m] / total;
    const Sym2 prec = comps[ids[m]].covariance.inverse();
    const Vec2 g = prec.apply(comps[ids[m]].mean - x);
    s += r * g;
    h = h + r * Sym2{g.x * g.x - prec.xx, g.x * g.y - prec.xy, g.y * g.y - prec.yy};
  }
  h = h + (-1.0) * Sym2{s.x * s.x, s.x * s.y, s.y * s.y};
  return {gmm.log_density(x, cls), s, h};
}

}  // namespace

std::vector<Vec2> find_modes(const GaussianMixture& gmm, ClassIndex cls) {
  gmm.check_class(cls);
  std::vector<Vec2> modes;
  double min_scale = std::numeric_limits<double>::infinity();
  for (const auto& c : gmm.components()) {
    double lo, hi;
    c.covariance.eigenvalues(lo, hi);
    min_scale = std::min(min_scale, std::sqrt(lo));
  }
  for (const auto& c : gmm.components()) {
    if (cls && c.label != *cls) continue;
    Vec2 x = c.mean;
    bool converged = false;
    for (int it = 0; it < 5000; ++it) {
      const LocalModel m = local_model(gmm, x, cls);
      double lo, hi;
      m.hessian.eigenvalues(lo, hi);
      Vec2 step;
      if (hi < 0.0) {
        step = -1.0 * m.hessian.inverse().apply(m.score);  // Newton
      } else {
        step = (min_scale * min_scale) * m.score;  // safe ascent
      }
      double t = 1.0;
      Vec2 next = x + step;
      while (gmm.log_density(next, cls) < m.log_density - 1e-15 && t > 1e-12) {
        t *= 0.5;
        next = x + t * step;
      }
      const double moved = norm(next - x);
      x = next;
      if (moved < 1e-13 * (1.0 + norm(x))) {
        converged = true;
        break;
      }
    }
    if (!converged) continue;
    const LocalModel m = local_model(gmm, x, cls);
    double lo, hi;
    m.hessian.eigenvalues(lo, hi);
    if (!(hi < 0.0)) continue;
    if (nearest_distance(x, modes) > 1e-6) modes.push_back(x);
  }
  return modes;
}

double nearest_distance(const Vec2& p, std::span<const Vec2> set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : set) best = std::min(best, norm(p - q));
  return best;
}

void write_landscape_csv(std::ostream& os, const LandscapeGrid& grid) {
  os << "i,j,x,y,grad_x,grad_y,potential\n";
  const int n = grid.resolution;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const std::size_t c = static_cast<std::size_t>(j) * n + i;
      const Vec2 p = grid.centre(i, j);
      os << i << ',' << j << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
         << format_double(grid.grad_field[c].x) << ',' << format_double(grid.grad_field[c].y) << ','
         << format_double(c < grid.potential.size() ? grid.potential[c] : 0.0) << '\n';
    }
}

void write_heatmap_ppm(std::ostream& os, std::span<const double> values, int width, int height) {
  if (width < 1 || height < 1 || values.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("heatmap shape mismatch");
  static constexpr std::array<std::array<double, 3>, 5> kStops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                                {94, 201, 98}, {253, 231, 37}}};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double span = hi > lo ? hi - lo : 1.0;
  os << "P6\n" << width << ' ' << height << "\n255\n";
  for (int row = 0; row < height; ++row) {
    const int j = height - 1 - row;
    for (int i = 0; i < width; ++i) {
      const double v = values[static_cast<std::size_t>(j) * width + i];
      const double u = std::isfinite(v) ? std::clamp((v - lo) / span, 0.0, 1.0) * (kStops.size() - 1) : 0.0;
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(u), kStops.size() - 2);
      const double f = u - static_cast<double>(k);
      for (int ch = 0; ch < 3; ++ch) {
        const double c = kStops[k][ch] + f * (kStops[k + 1][ch] - kStops[k][ch]);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c))));
      }
    }
  }
}

void write_density_ppm(std::ostream& os, std::span<const Vec2> points, double lo, double hi, int resolution) {
  std::vector<double> counts(static_cast<std::size_t>(resolution) * resolution, 0.0);
  const double h = (hi - lo) / resolution;
  for (const auto& p : points) {
    const int i = static_cast<int>(std::floor((p.x - lo) / h));
    const int j = static_cast<int>(std::floor((p.y - lo) / h));
    if (i < 0 || j < 0 || i >= resolution || j >= resolution) continue;
    counts[static_cast<std::size_t>(j) * resolution + i] += 1.0;
  }
  for (double& c : counts) c = std::log1p(c);
  write_heatmap_ppm(os, counts, resolution, resolution);
}

}  // namespace msd

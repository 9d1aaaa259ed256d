#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "msd/distill.hpp"
#include "msd/error.hpp"
#include "msd/gmm.hpp"
#include "msd/rng.hpp"
#include "oracles.hpp"

using namespace msd;

namespace {

const Vec2 kMu{0.3, -0.2};
constexpr double kSd = 0.25;

Dataset points_dataset(std::vector<Vec2> pts) {
  Dataset d;
  d.points = std::move(pts);
  return d;
}

// Closed-form E[alpha (eps_hat - eps)] for N(mu, s^2 I) data under VE with t uniform over the grid.
Vec2 sds_expectation(const NoiseSchedule& s, const Vec2& x) {
  Vec2 acc;
  for (double sigma : s.sigma()) acc += (sigma / (kSd * kSd + sigma * sigma)) * (x - kMu);
  return acc / static_cast<double>(s.num_steps());
}

struct Sampled {
  test::MeanSe x, y;
};

template <class F>
Sampled sample_estimates(int n, F&& draw) {
  std::vector<double> xs, ys;
  for (int i = 0; i < n; ++i) {
    const Vec2 g = draw(static_cast<std::uint64_t>(i));
    xs.push_back(g.x);
    ys.push_back(g.y);
  }
  return {test::mean_se(xs), test::mean_se(ys)};
}

}  // namespace

TEST_CASE("sds expectation vanishes at the gaussian mean") {
  const test::GaussianPosterior d(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const EstimatorContext ctx{d, none, s};
  const auto r = sample_estimates(100000, [&](std::uint64_t i) { return sds_gradient(ctx, kMu, 1, stream_seed(1, i)).grad; });
  CHECK(std::abs(r.x.mean) < 3 * r.x.se);
  CHECK(std::abs(r.y.mean) < 3 * r.y.se);
}

TEST_CASE("sds estimate matches the closed-form gaussian integrand") {
  const test::GaussianPosterior d(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const EstimatorContext ctx{d, none, s};
  const Vec2 x{0.9, 0.4};
  const Vec2 expected = sds_expectation(s, x);
  const auto r = sample_estimates(100000, [&](std::uint64_t i) { return sds_gradient(ctx, x, 1, stream_seed(2, i)).grad; });
  CHECK(std::abs(r.x.mean - expected.x) < 3 * r.x.se);
  CHECK(std::abs(r.y.mean - expected.y) < 3 * r.y.se);
  CHECK(norm(expected) > 10 * r.x.se);
}

TEST_CASE("sds with many draws reproduces the quadrature over levels") {
  // One data point: eps_hat - eps = (x - u0) / sigma exactly, so only t is random.
  const IdealDenoiser d(points_dataset({{0.1, 0.2}}));
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.05, 3.0);
  const EstimatorContext ctx{d, none, s};
  const Vec2 x{0.5, -0.1};
  double mean_inv = 0.0, mean_inv2 = 0.0;
  for (double sigma : s.sigma()) {
    mean_inv += 1.0 / sigma / 32.0;
    mean_inv2 += 1.0 / (sigma * sigma) / 32.0;
  }
  const Vec2 quadrature = mean_inv * (x - Vec2{0.1, 0.2});
  const double se = std::sqrt((mean_inv2 - mean_inv * mean_inv) / 1000.0) * norm(x - Vec2{0.1, 0.2});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto g = sds_gradient(ctx, x, 1000, seed);
    CHECK(norm(g.grad - quadrature) < 3.5 * se);
    CHECK(g.cost == 1000);
    CHECK(g.mc_samples == 1000);
  }
}

TEST_CASE("sdi is stationary at a lone data point and at a gaussian mean") {
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const IdealDenoiser lone(points_dataset({{0.4, -0.3}}));
  const EstimatorContext ctx{lone, none, s};
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(norm(sdi_gradient(ctx, {0.4, -0.3}, 4, seed).grad) < 1e-12);
  const test::GaussianPosterior g(kMu, kSd);
  const EstimatorContext gctx{g, none, s};
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(norm(sdi_gradient(gctx, kMu, 4, seed).grad) < 1e-12);
}

TEST_CASE("sdi costs more than sds") {
  const test::GaussianPosterior g(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const EstimatorContext ctx{g, none, s};
  for (int n : {1, 8}) {
    const auto a = sds_gradient(ctx, {0.1, 0.1}, n, 1), b = sdi_gradient(ctx, {0.1, 0.1}, n, 1);
    CHECK(b.cost > a.cost);
    CHECK(b.cost == a.cost + 32);
  }
}

TEST_CASE("msd is stationary at an isolated mode") {
  const test::GaussianPosterior g(kMu, 0.05);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 64, 0.002, 3.0);
  const EstimatorContext ctx{g, none, s};
  for (bool stable : {false, true}) {
    const auto e = msd_gradient(ctx, msd_guide(kMu, 0.01, s), 256, 3, stable);
    CHECK(norm(e.grad) < 1e-3);
  }
}

TEST_CASE("msd expectation is the gaussian product mean minus x") {
  const test::GaussianPosterior g(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 256, 0.002, 80.0);
  const EstimatorContext ctx{g, none, s};
  const Vec2 x{0.8, 0.4};
  const double lambda = 0.3, l2 = kernel_variance(lambda), s2 = kSd * kSd;
  const Vec2 expected = (l2 * kMu + s2 * x) / (l2 + s2) - x;
  for (bool stable : {false, true}) {
    const auto r = sample_estimates(10000, [&](std::uint64_t i) {
      return msd_gradient(ctx, msd_guide(x, lambda, s), 1, stream_seed(4, i), stable, NoiseDraw::iid).grad;
    });
    CHECK(std::abs(r.x.mean - expected.x) < 3 * r.x.se);
    CHECK(std::abs(r.y.mean - expected.y) < 3 * r.y.se);
  }
}

TEST_CASE("msd aligns with the smoothed density gradient") {
  const auto gmm = std::make_shared<GaussianMixture>(build_spiral(100, 2.0, 0.02));
  const IdealDenoiser d(sample(gmm, 10000, 11, std::nullopt, SampleDraw::stratified));
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 5.2);
  const EstimatorContext ctx{d, none, s};
  const double lambda = 0.3;
  const auto smooth = smoothed(*gmm, lambda);
  double max_grad = 0.0;
  for (int j = 0; j < 60; ++j)
    for (int i = 0; i < 60; ++i)
      max_grad = std::max(max_grad, norm(smooth.density_gradient({-1.5 + 0.05 * i, -1.5 + 0.05 * j})));
  Rng rng(12);
  int used = 0;
  while (used < 12) {
    const Vec2 x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    const Vec2 ref = smooth.density_gradient(x);
    if (norm(ref) < 0.25 * max_grad) continue;
    ++used;
    const auto e = msd_gradient(ctx, msd_guide(x, lambda, s), 1024, stream_seed(13, used), false);
    CHECK(cosine(e.grad, ref) > 0.99);
  }
}

TEST_CASE("adam identities") {
  const AdamConfig cfg;
  DistillState s;
  s.theta = {0.3, -0.4};
  const auto zero = adam_step(s, {0.0, 0.0}, cfg);
  CHECK(zero.theta == s.theta);
  const Vec2 g{0.5, -2.0};
  const auto one = adam_step(s, g, cfg);
  CHECK(one.theta.x == doctest::Approx(0.3 - cfg.lr * 0.5 / (0.5 + cfg.eps_hat)).epsilon(1e-14));
  CHECK(one.theta.y == doctest::Approx(-0.4 + cfg.lr * 2.0 / (2.0 + cfg.eps_hat)).epsilon(1e-14));
  CHECK(one.step == 1);
  DistillState run = s;
  Vec2 prev = run.theta;
  for (int i = 0; i < 2000; ++i) {
    prev = run.theta;
    run = adam_step(run, g, cfg);
  }
  CHECK(std::abs(run.theta.x - prev.x) == doctest::Approx(cfg.lr).epsilon(1e-6));
  CHECK(std::abs(run.theta.y - prev.y) == doctest::Approx(cfg.lr).epsilon(1e-6));
  CHECK_THROWS_AS(adam_step(s, {NAN, 0.0}, cfg), NumericalError);
}

TEST_CASE("anneal schedule") {
  BandwidthSchedule b;
  CHECK(anneal(b, 0).lambda == 0.316);
  CHECK_FALSE(anneal(b, 0).terminated);
  const auto end = anneal(b, b.total_steps);
  CHECK(end.lambda == b.lambda_min);
  CHECK(end.terminated);
  CHECK(anneal(b, b.total_steps / 2).lambda == doctest::Approx(0.5 * (b.lambda0 + b.lambda_min)).epsilon(1e-14));
  CHECK_FALSE(anneal(b, b.total_steps - 1).terminated);
  for (std::int64_t k = 1; k < b.total_steps; ++k) CHECK(anneal(b, k).lambda < anneal(b, k - 1).lambda);
  b.mode = AnnealMode::none;
  CHECK(anneal(b, 1000).lambda == b.lambda0);
  CHECK_FALSE(anneal(b, 1000).terminated);
  b.lambda_min = 1.0;
  CHECK_THROWS(anneal(b, 0));
}

TEST_CASE("msd halts when the bandwidth reaches its floor, sds and sdi use the full budget") {
  const test::GaussianPosterior g(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 16, 0.002, 3.0);
  const EstimatorContext ctx{g, none, s};
  const std::vector<Vec2> init{{0.5, 0.5}, {-0.5, 0.2}};
  DistillConfig cfg;
  cfg.iterations = 100;
  cfg.bandwidth.total_steps = 40;
  cfg.method = Method::msd;
  auto r = distill_run(cfg, ctx, init, 1);
  for (auto k : r.iterations_run) CHECK(k == 40);
  CHECK(r.trace.size() == 80);
  CHECK(r.trace.back().lambda > cfg.bandwidth.lambda_min);
  for (Method m : {Method::sds, Method::sdi}) {
    cfg.method = m;
    r = distill_run(cfg, ctx, init, 1);
    for (auto k : r.iterations_run) CHECK(k == 100);
  }
  cfg.method = Method::msd;
  cfg.iterations = 10;
  r = distill_run(cfg, ctx, init, 1);
  for (auto k : r.iterations_run) CHECK(k == 10);
}

TEST_CASE("distillation is independent of the thread count") {
  const auto gmm = std::make_shared<GaussianMixture>(build_spiral(100, 2.0, 0.02));
  const IdealDenoiser d(sample(gmm, 2000, 1));
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 16, 0.002, 5.2);
  const EstimatorContext ctx{d, none, s};
  const auto init = make_grid(-1.5, 1.5, 6);
  for (Method m : {Method::sds, Method::sdi, Method::msd}) {
    DistillConfig cfg;
    cfg.method = m;
    cfg.iterations = 20;
    cfg.bandwidth.total_steps = 20;
    const auto a = distill_run(cfg, ctx, init, 5, 1);
    const auto b = distill_run(cfg, ctx, init, 5, 4);
    CHECK(a.finals == b.finals);
    CHECK(a.costs == b.costs);
    std::ostringstream ta, tb;
    write_trace_csv(ta, a);
    write_trace_csv(tb, b);
    CHECK(ta.str() == tb.str());
  }
}

TEST_CASE("reported costs equal counted denoiser calls") {
  const auto gmm = std::make_shared<GaussianMixture>(build_fractal(4, 2, 20.0, 0));
  const IdealDenoiser inner(sample(gmm, 1000, 1));
  CountingDenoiser counter(inner);
  const auto s = make_schedule(ScheduleKind::variance_exploding, 16, 0.002, 3.0);
  for (GuidanceMode mode : {GuidanceMode::none, GuidanceMode::cfg}) {
    const GuidanceConfig guidance{mode, 4.0, nullptr};
    const EstimatorContext ctx{counter, guidance, s, 1};
    auto audit = [&](const GradientEstimate& e) {
      CHECK(e.cost == counter.calls());
      counter.reset();
    };
    counter.reset();
    audit(sds_gradient(ctx, {0.1, 0.2}, 5, 1));
    audit(sdi_gradient(ctx, {0.1, 0.2}, 5, 1));
    audit(msd_gradient(ctx, msd_guide({0.1, 0.2}, 0.3, s), 3, 1, false));
    audit(msd_gradient(ctx, msd_guide({0.1, 0.2}, 0.3, s), 3, 1, true));
    KernelGuide fixed = msd_guide({0.1, 0.2}, 0.3, s, KernelForm::fixed);
    audit(msd_gradient(ctx, fixed, 3, 1, true));
    DistillConfig cfg;
    cfg.iterations = 5;
    cfg.bandwidth.total_steps = 5;
    cfg.cls = 1;
    for (Method m : {Method::sds, Method::sdi, Method::msd}) {
      cfg.method = m;
      const auto r = distill_run(cfg, ctx, std::vector<Vec2>{{0.0, 0.0}, {0.3, 0.3}}, 2);
      CHECK(r.costs[0] + r.costs[1] == counter.calls());
      CHECK(r.trace.back().cumulative_cost == r.costs[1]);
      counter.reset();
    }
  }
}

TEST_CASE("naive integration failures propagate out of distillation") {
  const test::GaussianPosterior g(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const EstimatorContext ctx{g, none, s};
  DistillConfig cfg;
  cfg.method = Method::msd;
  cfg.kernel_form = KernelForm::fixed;
  cfg.bandwidth.lambda0 = 1e-3;
  cfg.bandwidth.lambda_min = 1e-4;
  const std::vector<Vec2> init{{50.0, -50.0}};
  CHECK_THROWS_AS(distill_run(cfg, ctx, init, 1), IntegratorInstability);
  cfg.stable = true;
  CHECK_NOTHROW(distill_run(cfg, ctx, init, 1));
}

TEST_CASE("grid, csv helpers and ascent direction") {
  const auto grid = make_grid(-1.5, 1.5, 64);
  REQUIRE(grid.size() == 4096);
  CHECK(grid[0].x == doctest::Approx(-1.5 + 1.5 / 64));
  CHECK(grid[1].x > grid[0].x);
  CHECK(grid[1].y == grid[0].y);
  CHECK(grid.back().x == doctest::Approx(1.5 - 1.5 / 64));
  std::stringstream ss;
  write_points_csv(ss, grid);
  CHECK(read_points_csv(ss) == grid);
  std::stringstream bad("x,y\n1,oops\n");
  CHECK_THROWS_AS(read_points_csv(bad), FormatError);
  std::stringstream header("a,b\n1,2\n");
  CHECK_THROWS_AS(read_points_csv(header), FormatError);
  CHECK(ascent_direction(Method::sds, {1, 2}) == Vec2{-1, -2});
  CHECK(ascent_direction(Method::sdi, {1, 2}) == Vec2{-1, -2});
  CHECK(ascent_direction(Method::msd, {1, 2}) == Vec2{1, 2});
  DistillResult r;
  r.trace.push_back({3, 4, {0.5, 0.25}, 1.5, 0.3, 7});
  std::ostringstream os;
  write_trace_csv(os, r);
  CHECK(os.str() == "point_id,iter,theta_x,theta_y,grad_norm,lambda,cumulative_cost\n3,4,0.5,0.25,1.5,0.3,7\n");
}

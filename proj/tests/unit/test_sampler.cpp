#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "msd/error.hpp"
#include "msd/gmm.hpp"
#include "msd/rng.hpp"
#include "msd/sampler.hpp"
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

struct Moments {
  Vec2 mean;
  Vec2 var;
  Vec2 se;
};

Moments moments(const std::vector<Vec2>& v) {
  const double n = static_cast<double>(v.size());
  Moments m;
  for (const auto& p : v) m.mean += p;
  m.mean /= n;
  for (const auto& p : v) {
    m.var.x += (p.x - m.mean.x) * (p.x - m.mean.x);
    m.var.y += (p.y - m.mean.y) * (p.y - m.mean.y);
  }
  m.var /= n - 1;
  m.se = {std::sqrt(m.var.x / n), std::sqrt(m.var.y / n)};
  return m;
}

// Product of N(mu, s^2 I) with the kernel centred at x (variance lambda^2 / 2).
struct Product {
  Vec2 mean;
  double var;
};

Product gaussian_product(const Vec2& x, double lambda) {
  const double l2 = kernel_variance(lambda), s2 = kSd * kSd;
  return {(l2 * kMu + s2 * x) / (l2 + s2), l2 * s2 / (l2 + s2)};
}

}  // namespace

TEST_CASE("ddim step with zero eps is a no-op under ve") {
  const auto s = make_schedule(ScheduleKind::variance_exploding, 16, 0.01, 2.0);
  for (std::size_t k = 0; k < 16; ++k) CHECK(ddim_step({0.3, -0.4}, {0, 0}, s, k) == Vec2{0.3, -0.4});
  const auto vp = make_schedule(ScheduleKind::variance_preserving, 16, 0.01, 0.99);
  const auto from = noise_at(vp, 5), to = noise_at(vp, 4);
  CHECK(norm(ddim_step({0.3, -0.4}, {0, 0}, vp, 5) - (to.alpha / from.alpha) * Vec2{0.3, -0.4}) < 1e-15);
}

TEST_CASE("ddim chain follows the analytic gaussian flow") {
  const test::GaussianPosterior d(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 4000, 1e-4, 3.0);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vec2 z_top = 3.0 * rng.normal2();
    const Vec2 expected = kMu + (kSd / std::sqrt(kSd * kSd + 9.0)) * (z_top - kMu);
    CHECK(norm(ddim_chain(d, none, s, z_top).clean() - expected) < 1e-3);
  }
}

TEST_CASE("ddim samples of a gaussian match the linear chain oracle") {
  const test::GaussianPosterior d(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 64, 0.002, 5.0);
  // For a linear denoiser each step contracts z - mu by k + (1 - k) sigma' / sigma.
  double c = 1.0;
  for (std::size_t k = 0; k < 64; ++k) {
    const double sigma = s.sigma()[k], next = k == 0 ? 0.0 : s.sigma()[k - 1];
    const double keep = kSd * kSd / (kSd * kSd + sigma * sigma);
    c *= keep + (1.0 - keep) * next / sigma;
  }
  const Vec2 expected = (1.0 - c) * kMu;
  std::vector<Vec2> out;
  for (std::uint64_t i = 0; i < 10000; ++i) out.push_back(ddim_sample(d, none, s, stream_seed(3, i)).sample);
  const auto m = moments(out);
  CHECK(std::abs(m.mean.x - expected.x) < 3 * m.se.x);
  CHECK(std::abs(m.mean.y - expected.y) < 3 * m.se.y);
  CHECK(std::sqrt(m.var.x) == doctest::Approx(c * 5.0).epsilon(0.05));
}

TEST_CASE("ddim sample cost and determinism") {
  const test::ConstantPerClass m({0, 0}, {0.2, 0.1});
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const GuidanceConfig none;
  const auto a = ddim_sample(m, none, s, 5, 0);
  CHECK(a.cost == 32);
  const GuidanceConfig cfg{GuidanceMode::cfg, 4.0, nullptr};
  CHECK(ddim_sample(m, cfg, s, 5, 0).cost == 64);
  const auto b = ddim_sample(m, none, s, 5, 0);
  CHECK(a.sample == b.sample);
  const test::GaussianPosterior g(kMu, kSd);
  CHECK(ddim_sample(g, none, s, 5).sample == ddim_sample(g, none, s, 5).sample);
  CHECK(ddim_sample(g, none, s, 6).sample != ddim_sample(g, none, s, 5).sample);
  const auto trj = ddim_chain(m, none, s, {1, 1}, 0);
  CHECK(trj.states.size() == 33);
}

TEST_CASE("inversion round trips") {
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const IdealDenoiser lone(points_dataset({{0.4, -0.1}}));
  const auto inv = ddim_invert(lone, none, s, {0.4, -0.1});
  CHECK(inv.states.size() == 33);
  CHECK(inv.cost == 32);
  CHECK(norm(ddim_chain(lone, none, s, inv.states.back()).clean() - Vec2{0.4, -0.1}) < 1e-6);

  const test::GaussianPosterior g(kMu, kSd);
  auto round_trip = [&](std::size_t n, const Vec2& x) {
    const auto grid = make_schedule(ScheduleKind::variance_exploding, n, 1e-4, 3.0);
    return norm(ddim_chain(g, none, grid, ddim_invert(g, none, grid, x).states.back()).clean() - x);
  };
  for (const Vec2 x : {Vec2{0.1, 0.1}, Vec2{0.6, -0.5}, Vec2{-0.3, 0.2}}) {
    const double coarse = round_trip(1000, x), fine = round_trip(4000, x);
    CHECK(coarse / fine == doctest::Approx(4.0).epsilon(0.1));
    CHECK(round_trip(400000, x) < 1e-5);
  }
}

TEST_CASE("inversion where the denoiser is the identity only rescales x") {
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_preserving, 64, 0.01, 0.99);
  const test::GaussianPosterior flat({0.0, 0.0}, 1e8);
  const Vec2 x{0.7, -1.2};
  const auto t = ddim_invert(flat, none, s, x);
  for (std::size_t k = 0; k < 64; ++k) CHECK(norm(t.at(k) - s.alpha()[k] * x) < 1e-9);
}

TEST_CASE("inversion rejects non-finite input") {
  const test::GaussianPosterior g(kMu, kSd);
  const auto s = make_schedule(ScheduleKind::variance_exploding, 8, 0.01, 2.0);
  CHECK_THROWS(ddim_invert(g, GuidanceConfig{}, s, {NAN, 0.0}));
}

TEST_CASE("kernel guided samplers reduce to ddim as lambda grows") {
  const auto gmm = std::make_shared<GaussianMixture>(build_spiral(100, 2.0, 0.02));
  const IdealDenoiser d(sample(gmm, 2000, 1));
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 5.2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vec2 ref = ddim_sample(d, none, s, seed).sample;
    for (KernelForm form : {KernelForm::noised, KernelForm::fixed}) {
      const KernelGuide guide = default_guide({0.5, 0.5}, 1e9, s, form);
      CHECK(norm(product_sample_naive(d, none, s, guide, seed).sample - ref) < 1e-9);
      CHECK(norm(product_sample_stable(d, none, s, guide, seed).sample - ref) < 1e-9);
    }
  }
}

TEST_CASE("product samplers match the gaussian product") {
  const test::GaussianPosterior d(kMu, kSd);
  const GuidanceConfig none;
  const auto s = make_schedule(ScheduleKind::variance_exploding, 256, 0.002, 80.0);
  const Vec2 x{0.8, 0.4};
  const double lambda = 0.3;
  const auto expected = gaussian_product(x, lambda);
  KernelGuide guide = default_guide(x, lambda, s);
  guide.centre_prior = true;
  std::vector<Vec2> naive, stable;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    naive.push_back(product_sample_naive(d, none, s, guide, stream_seed(7, i)).sample);
    stable.push_back(product_sample_stable(d, none, s, guide, stream_seed(7, i)).sample);
  }
  for (const auto* v : {&naive, &stable}) {
    const auto m = moments(*v);
    CHECK(std::abs(m.mean.x - expected.mean.x) < 3 * m.se.x);
    CHECK(std::abs(m.mean.y - expected.mean.y) < 3 * m.se.y);
    CHECK(m.var.x == doctest::Approx(expected.var).epsilon(0.05));
    CHECK(m.var.y == doctest::Approx(expected.var).epsilon(0.05));
  }
  const auto a = moments(naive), b = moments(stable);
  CHECK(norm(a.mean - b.mean) < 0.02 * norm(expected.mean));
}

TEST_CASE("explicit fixed-kernel integration blows up for tiny lambda and a far anchor") {
  const test::GaussianPosterior d(kMu, kSd);
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const KernelGuide guide = default_guide({50.0, -50.0}, 1e-3, s, KernelForm::fixed);
  CHECK_THROWS_AS(product_sample_naive(d, GuidanceConfig{}, s, guide, 1), IntegratorInstability);
  const auto y = product_sample_stable(d, GuidanceConfig{}, s, guide, 1).sample;
  CHECK(is_finite(y));
}

TEST_CASE("stable sampler contracts onto the anchor as lambda vanishes") {
  const auto gmm = std::make_shared<GaussianMixture>(build_pinwheel(5, 10, 1.5));
  const IdealDenoiser d(sample(gmm, 2000, 2));
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  for (KernelForm form : {KernelForm::noised, KernelForm::fixed}) {
    for (const Vec2 x : {Vec2{0.2, 0.3}, Vec2{-1.0, 0.7}, Vec2{3.0, 3.0}}) {
      const KernelGuide guide = default_guide(x, 1e-10, s, form);
      for (std::uint64_t seed = 0; seed < 5; ++seed)
        CHECK(norm(product_sample_stable(d, GuidanceConfig{}, s, guide, seed).sample - x) < 1e-6);
    }
  }
}

TEST_CASE("stable sampler stays finite across bandwidths") {
  const auto gmm = std::make_shared<GaussianMixture>(build_fractal(4, 2, 20.0, 0));
  const IdealDenoiser d(sample(gmm, 2000, 2));
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  for (double lambda : {1e-8, 1e-4, 1e-2, 0.3, 10.0, 1e6})
    for (KernelForm form : {KernelForm::noised, KernelForm::fixed}) {
      const KernelGuide guide = default_guide({40.0, -40.0}, lambda, s, form);
      CHECK(is_finite(product_sample_stable(d, GuidanceConfig{}, s, guide, 3).sample));
    }
}

TEST_CASE("product sampler cost counts every model call") {
  const auto gmm = std::make_shared<GaussianMixture>(build_spiral(100, 2.0, 0.02));
  const IdealDenoiser inner(sample(gmm, 500, 1));
  CountingDenoiser counter(inner);
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 5.2);
  for (KernelForm form : {KernelForm::noised, KernelForm::fixed}) {
    const KernelGuide guide = default_guide({0.1, 0.1}, 0.3, s, form);
    counter.reset();
    const auto a = product_sample_naive(counter, GuidanceConfig{}, s, guide, 4);
    CHECK(a.cost == counter.calls());
    counter.reset();
    const auto b = product_sample_stable(counter, GuidanceConfig{}, s, guide, 4);
    CHECK(b.cost == counter.calls());
    CHECK(b.cost >= 32);
    const auto again = product_sample_stable(inner, GuidanceConfig{}, s, guide, 4);
    CHECK(again.sample == b.sample);
  }
}

TEST_CASE("kernel guide validation") {
  const auto s = make_schedule(ScheduleKind::variance_exploding, 10, 0.01, 1.0);
  KernelGuide g = default_guide({0, 0}, 0.3, s, KernelForm::fixed);
  CHECK(g.k_lo == 0);
  CHECK(g.k_hi == 5);
  CHECK_NOTHROW(g.validate(s));
  g.lambda = 0.0;
  CHECK_THROWS(g.validate(s));
  g = default_guide({0, 0}, 0.3, s);
  g.k_hi = 10;
  CHECK_THROWS(g.validate(s));
}

TEST_CASE("initial latents") {
  const auto s = make_schedule(ScheduleKind::variance_exploding, 10, 0.01, 4.0);
  for (NoiseDraw draw : {NoiseDraw::iid, NoiseDraw::lattice}) {
    const auto z = initial_latents(s, 20000, 3, draw);
    REQUIRE(z.size() == 20000);
    const auto m = moments(z);
    CHECK(std::abs(m.mean.x) < 4 * 4.0 / std::sqrt(20000.0));
    CHECK(m.var.x == doctest::Approx(16.0).epsilon(0.05));
    CHECK(m.var.y == doctest::Approx(16.0).epsilon(0.05));
    CHECK(initial_latents(s, 20000, 3, draw) == z);
  }
}

TEST_CASE("trajectory csv") {
  Trajectory t;
  t.states = {{0, 1}, {2, 3}};
  std::ostringstream os;
  write_trajectory_csv(os, t);
  CHECK(os.str() == "step,z_x,z_y\n0,0,1\n1,2,3\n");
}

#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "msd/schedule.hpp"

using namespace msd;

TEST_CASE("ve endpoints are the geometric bounds") {
  const auto s = make_schedule(ScheduleKind::variance_exploding, 2, 0.01, 1.0);
  REQUIRE(s.num_steps() == 2);
  CHECK(s.sigma()[0] == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(s.sigma()[1] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.alpha()[0] == 1.0);
  CHECK(s.alpha()[1] == 1.0);
}

TEST_CASE("ve sigmas are geometric and strictly increasing") {
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 1.5);
  REQUIRE(s.num_steps() == 32);
  const double ratio = std::pow(1.5 / 0.002, 1.0 / 31.0);
  for (std::size_t i = 1; i < 32; ++i) {
    CHECK(s.sigma()[i] > s.sigma()[i - 1]);
    CHECK(s.sigma()[i] / s.sigma()[i - 1] == doctest::Approx(ratio).epsilon(1e-12));
    CHECK(s.t_grid()[i] > s.t_grid()[i - 1]);
  }
  CHECK(s.t_grid().back() <= 1.0);
  CHECK(s.t_grid().front() > 0.0);
}

TEST_CASE("vp identity holds at every level") {
  for (std::size_t n : {2u, 7u, 32u, 1000u}) {
    const auto s = make_schedule(ScheduleKind::variance_preserving, n, 0.002, 0.999);
    for (std::size_t i = 0; i < n; ++i) {
      const auto l = noise_at(s, i);
      CHECK(std::abs(l.alpha * l.alpha + l.sigma * l.sigma - 1.0) < 1e-12);
      if (i > 0) {
        CHECK(s.alpha()[i] < s.alpha()[i - 1]);
        CHECK(s.sigma()[i] > s.sigma()[i - 1]);
      }
    }
  }
}

TEST_CASE("noise_at endpoints and bounds") {
  const auto s = make_schedule(ScheduleKind::variance_exploding, 32, 0.002, 3.0);
  const auto top = noise_at(s, 31);
  CHECK(top.alpha == 1.0);
  CHECK(top.sigma == doctest::Approx(3.0).epsilon(1e-14));
  const auto bottom = noise_at(s, 0);
  CHECK(bottom.sigma == doctest::Approx(0.002).epsilon(1e-14));
  CHECK_THROWS_AS(noise_at(s, 32), std::out_of_range);
  const auto clean = level_or_clean(s, -1);
  CHECK(clean.alpha == 1.0);
  CHECK(clean.sigma == 0.0);
  const auto a = noise_at(s, 5), b = noise_at(s, 5);
  CHECK(a.sigma == b.sigma);
}

TEST_CASE("invalid schedule bounds are rejected") {
  CHECK_THROWS_AS(make_schedule(ScheduleKind::variance_exploding, 1, 0.01, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(ScheduleKind::variance_exploding, 8, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(ScheduleKind::variance_exploding, 8, 0.0, 0.5), std::invalid_argument);
  CHECK(to_string(parse_schedule_kind("vp")) == "vp");
  CHECK_THROWS(parse_schedule_kind("cosine"));
}

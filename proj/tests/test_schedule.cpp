#include <cmath>
#include <stdexcept>

#include "cddrec/schedule.hpp"
#include "doctest.h"

using namespace cddrec;

TEST_CASE("linear schedule fills the documented tables") {
  auto s = build_schedule(2, 0.2);
  CHECK(s.max_step() == 2);
  CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.beta(2) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.alpha(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha(2) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));

  // T = 1 is legal: a single fully-specified step.
  auto one = build_schedule(1, 0.5);
  CHECK(one.beta(1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(one.alpha_bar(1) == doctest::Approx(0.5).epsilon(1e-15));

  // The last step always reaches beta_max regardless of T.
  for (int T : {1, 3, 10, 97}) {
    CHECK(build_schedule(T, 0.04).beta(T) == doctest::Approx(0.04).epsilon(1e-15));
  }
}

TEST_CASE("alpha_bar starts at one and strictly decreases") {
  auto s = build_schedule(50, 0.1);
  CHECK(s.alpha_bar(0) == 1.0);
  for (int t = 1; t <= 50; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.alpha_bar(t) > 0.0);
  }
}

TEST_CASE("posterior variance follows the mode and floors at zero") {
  auto s = build_schedule(2, 0.2);
  CHECK(s.posterior_variance(1) == 0.0);
  CHECK(s.posterior_variance(2) == doctest::Approx(0.1 / 0.28).epsilon(1e-13));

  ScheduleOptions std_mode;
  std_mode.posterior_variance_mode = PosteriorVarianceMode::standard;
  auto st = build_schedule(2, 0.2, ScheduleShape::linear, std_mode);
  CHECK(st.posterior_variance(1) == 0.0);
  CHECK(st.posterior_variance(2) ==
        doctest::Approx(0.2 * 0.1 / 0.28).epsilon(1e-13));

  ScheduleOptions floored;
  floored.posterior_variance_floor = 1e-4;
  auto fl = build_schedule(2, 0.2, ScheduleShape::linear, floored);
  CHECK(fl.posterior_variance(1) == 1e-4);
  CHECK(fl.posterior_variance(2) == doctest::Approx(0.1 / 0.28).epsilon(1e-13));

  // The ratio form stays inside [0, 1) because alpha_bar decreases.
  auto big = build_schedule(100, 0.08);
  for (int t = 1; t <= 100; ++t) {
    CHECK(big.posterior_variance(t) >= 0.0);
    CHECK(big.posterior_variance(t) < 1.0);
  }
}

// Iterating x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps_t from x_0 gives a
// Gaussian whose moments obey m_t = sqrt(alpha_t) m_{t-1}, v_t = alpha_t
// v_{t-1} + beta_t. Those recursions must land on the closed-form marginal
// sqrt(alpha_bar_t), 1 - alpha_bar_t used by marginal_sample.
TEST_CASE("per-step kernel moments compose to the closed-form marginal") {
  auto s = build_schedule(40, 0.1);
  double m = 1.0, v = 0.0;
  for (int t = 1; t <= 40; ++t) {
    m *= std::sqrt(s.alpha(t));
    v = s.alpha(t) * v + s.beta(t);
    CHECK(m == doctest::Approx(std::sqrt(s.alpha_bar(t))).epsilon(1e-12));
    CHECK(v == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(1e-12));
  }
}

TEST_CASE("marginal_sample mixes signal and noise by alpha_bar") {
  auto s = build_schedule(2, 0.2);
  Vec x0(3), eps(3);
  x0 << 1.0, -2.0, 0.5;
  eps << 0.3, 0.0, -1.0;

  Vec same = marginal_sample(s, x0, 0, eps);
  CHECK((same - x0).norm() == 0.0);

  Vec x2 = marginal_sample(s, x0, 2, eps);
  for (int i = 0; i < 3; ++i) {
    CHECK(x2(i) == doctest::Approx(std::sqrt(0.72) * x0(i) +
                                   std::sqrt(0.28) * eps(i))
                       .epsilon(1e-14));
  }

  Mat X0(2, 3), E(2, 3);
  X0 << 1.0, -2.0, 0.5, 0.0, 4.0, -1.0;
  E << 0.3, 0.0, -1.0, 1.0, 1.0, 1.0;
  Mat X2 = marginal_sample(s, X0, 2, E);
  for (int r = 0; r < 2; ++r) {
    Vec row = marginal_sample(s, Vec(X0.row(r)), 2, Vec(E.row(r)));
    CHECK((X2.row(r).transpose() - row).norm() == 0.0);
  }

  Vec bad(2);
  bad << 0.0, 0.0;
  CHECK_THROWS_AS(marginal_sample(s, x0, 1, bad), std::invalid_argument);
  CHECK_THROWS_AS(marginal_sample(s, x0, 3, eps), std::out_of_range);
  CHECK_THROWS_AS(marginal_sample(s, x0, -1, eps), std::out_of_range);
}

TEST_CASE("sampled marginal matches its stated mean and variance") {
  auto s = build_schedule(10, 0.2);
  RngStream rng(7, RngPurpose::diffusion);
  const int n = 20000;
  const double x0 = 0.8;
  const int t = 7;
  double sum = 0.0, sumsq = 0.0;
  Vec x(1), e(1);
  x << x0;
  for (int i = 0; i < n; ++i) {
    e << rng.normal();
    double v = marginal_sample(s, x, t, e)(0);
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  double want_mean = std::sqrt(s.alpha_bar(t)) * x0;
  double want_var = 1.0 - s.alpha_bar(t);
  double se_mean = std::sqrt(want_var / n);
  double se_var = want_var * std::sqrt(2.0 / (n - 1));
  CHECK(std::abs(mean - want_mean) < 4.0 * se_mean);
  CHECK(std::abs(var - want_var) < 4.0 * se_var);
}

TEST_CASE("construction validates its inputs") {
  CHECK_THROWS_AS(build_schedule(0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(-3, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(5, -0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(5, 1.5), std::invalid_argument);

  auto s = build_schedule(5, 0.1);
  CHECK_THROWS_AS(s.beta(0), std::out_of_range);
  CHECK_THROWS_AS(s.beta(6), std::out_of_range);
  CHECK_THROWS_AS(s.alpha_bar(-1), std::out_of_range);
  CHECK_THROWS_AS(s.alpha_bar(6), std::out_of_range);
  CHECK_THROWS_AS(s.posterior_variance(0), std::out_of_range);
}

TEST_CASE("rebuilding the same schedule is bit-identical") {
  auto a = build_schedule(25, 0.06);
  auto b = build_schedule(25, 0.06);
  for (int t = 0; t <= 25; ++t) CHECK(a.alpha_bar(t) == b.alpha_bar(t));
  for (int t = 1; t <= 25; ++t) {
    CHECK(a.beta(t) == b.beta(t));
    CHECK(a.posterior_variance(t) == b.posterior_variance(t));
  }
}

TEST_CASE("rng streams are keyed by purpose and reproducible") {
  RngStream a(11, RngPurpose::diffusion, 3, 4);
  RngStream b(11, RngPurpose::diffusion, 3, 4);
  for (int i = 0; i < 16; ++i) CHECK(a.normal() == b.normal());

  RngStream c(11, RngPurpose::prediction, 3, 4);
  RngStream d(11, RngPurpose::diffusion, 3, 4);
  bool all_equal = true;
  for (int i = 0; i < 16; ++i) all_equal = all_equal && c.normal() == d.normal();
  CHECK_FALSE(all_equal);

  RngStream e(11, RngPurpose::diffusion, 3, 5);
  RngStream f(11, RngPurpose::diffusion, 3, 4);
  all_equal = true;
  for (int i = 0; i < 16; ++i) all_equal = all_equal && e.normal() == f.normal();
  CHECK_FALSE(all_equal);
}

TEST_CASE("schedule enum names round-trip through strings") {
  CHECK(to_string(ScheduleShape::linear) == "linear");
  CHECK(schedule_shape_from_string("linear") == ScheduleShape::linear);
  CHECK_THROWS_AS(schedule_shape_from_string("cosine"), std::invalid_argument);
  CHECK(to_string(PosteriorVarianceMode::paper) == "paper");
  CHECK(to_string(PosteriorVarianceMode::standard) == "standard");
  CHECK(posterior_mode_from_string("standard") ==
        PosteriorVarianceMode::standard);
  CHECK_THROWS_AS(posterior_mode_from_string("x"), std::invalid_argument);
}

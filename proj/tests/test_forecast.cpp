#include <doctest.h>

#include <cmath>

#include "simplexts/estimation.hpp"
#include "simplexts/forecast.hpp"
#include "test_util.hpp"

using namespace simplexts;

TEST_SUITE_BEGIN("forecast");

namespace {

DirichletFiniteSpec degenerate_spec(double phi) {
  DirichletFiniteSpec spec;
  spec.d = 3;
  spec.p = 1;
  spec.A0 = Eigen::Vector2d(0.6, -0.2);  // lambda* = alr_inv(A0)
  spec.A = {Eigen::MatrixXd::Zero(2, 2)};
  spec.a0 = std::log(phi);
  spec.a = {0.0};
  return spec;
}

DirichletFiniteSpec study_spec() {
  DirichletFiniteSpec spec;
  spec.d = 3;
  spec.p = 1;
  spec.A0 = Eigen::Vector2d(-1.0, -2.0);
  spec.A = {(Eigen::MatrixXd(2, 2) << 4.0, 3.0, 3.0, 5.0).finished()};
  spec.a0 = 1.5;
  spec.a = {0.7};
  return spec;
}

}  // namespace

TEST_CASE("degenerate spec concentrates on lambda star") {
  const DirichletFiniteSpec spec = degenerate_spec(1e6);
  const Composition lambda = alr_inv(spec.A0);
  Rng rng(5);
  const auto history = testutil::random_compositions(3, 3, rng);
  const ForecastResult result = forecast(spec, history, 4, 2000, 0.05, 99);
  for (int step = 0; step < 4; ++step)
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(result.mean[step][i] - lambda[i]) < 1e-3);
      CHECK(result.upper(step, i) - result.lower(step, i) < 1e-2);
      CHECK(result.lower(step, i) <= result.mean[step][i]);
      CHECK(result.mean[step][i] <= result.upper(step, i));
    }
}

TEST_CASE("forecast validation") {
  const DirichletFiniteSpec spec = study_spec();
  Rng rng(6);
  const auto history = testutil::random_compositions(5, 3, rng);
  CHECK_THROWS_AS(forecast(spec, history, 0, 1000, 0.05, 1), std::invalid_argument);
  CHECK_THROWS_AS(forecast(spec, history, 4, 50, 0.05, 1), std::invalid_argument);
  CHECK_THROWS_AS(forecast(spec, history, 4, 1000, 1.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(forecast(spec, {}, 4, 1000, 0.05, 1), std::invalid_argument);

  DirichletODSpec bad;
  bad.d = 3;
  bad.C = Eigen::Vector2d::Zero();
  bad.A = Eigen::MatrixXd::Zero(2, 2);
  bad.B = Eigen::MatrixXd::Zero(2, 2);
  bad.b = 1.02;
  CHECK_THROWS_AS(forecast(bad, history, 4, 1000, 0.05, 1), std::domain_error);
}

TEST_CASE("forecast means sum to one and quantiles are ordered") {
  const DirichletFiniteSpec spec = study_spec();
  Rng rng(7);
  const auto history = simulate(spec, 30, 500, rng);
  const int reps = 4000;
  const ForecastResult result = forecast(spec, history, 8, reps, 0.05, 11);
  for (int step = 0; step < 8; ++step) {
    CHECK(std::abs(result.mean[step].values().sum() - 1.0) < 3.0 / std::sqrt(reps));
    for (int i = 0; i < 3; ++i) CHECK(result.lower(step, i) <= result.upper(step, i));
  }
}

TEST_CASE("horizon-one mean matches the filtered conditional mean") {
  const DirichletFiniteSpec spec = study_spec();
  Rng rng(8);
  const auto history = simulate(spec, 30, 500, rng);
  Stepper stepper((ModelSpec(spec)));
  stepper.prime(history);
  const DirichletParams law = stepper.next_dirichlet();
  const int reps = 100000;
  const ForecastResult result = forecast(spec, history, 1, reps, 0.05, 123);
  for (int i = 0; i < 3; ++i) {
    const double lambda = law.lambda[i];
    const double se = std::sqrt(lambda * (1 - lambda) / (law.phi + 1) / reps);
    CHECK(std::abs(result.mean[0][i] - lambda) < 3 * se);
  }
}

TEST_CASE("quantiles are stable when reps double") {
  const DirichletFiniteSpec spec = study_spec();
  Rng rng(9);
  const auto history = simulate(spec, 20, 500, rng);
  const ForecastResult small = forecast(spec, history, 4, 4000, 0.05, 77);
  const ForecastResult big = forecast(spec, history, 4, 8000, 0.05, 78);
  for (int step = 0; step < 4; ++step)
    for (int i = 0; i < 3; ++i) {
      // quantile MC error ~ sqrt(p(1-p)/n)/density: keep a generous band
      CHECK(std::abs(small.lower(step, i) - big.lower(step, i)) < 0.05);
      CHECK(std::abs(small.upper(step, i) - big.upper(step, i)) < 0.05);
    }
}

TEST_CASE("interpolated quantile convention") {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  CHECK(interpolated_quantile(x, 0.0) == 1.0);
  CHECK(interpolated_quantile(x, 1.0) == 4.0);
  CHECK(interpolated_quantile(x, 0.5) == doctest::Approx(2.5));
  CHECK(interpolated_quantile(x, 1.0 / 3) == doctest::Approx(2.0));
}

TEST_SUITE_END();

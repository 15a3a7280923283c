#include <doctest.h>

#include <cmath>

#include "simplexts/optimize.hpp"

using namespace simplexts;

TEST_SUITE_BEGIN("optimize");

TEST_CASE("quadratic bowl") {
  const auto fn = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = 2.0 * x;
    return x.squaredNorm();
  };
  const BfgsResult result = minimize_bfgs(fn, Eigen::VectorXd::Constant(4, 3.0));
  CHECK(result.converged);
  CHECK(result.x.norm() < 1e-8);
}

TEST_CASE("rosenbrock") {
  const auto fn = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    g.resize(2);
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  const BfgsResult result = minimize_bfgs(fn, x0);
  CHECK(result.converged);
  CHECK(std::abs(result.x[0] - 1.0) < 1e-6);
  CHECK(std::abs(result.x[1] - 1.0) < 1e-6);
}

TEST_CASE("line search on a cliff returns the best iterate") {
  // objective undefined (inf) to the left of zero
  const auto fn = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g.resize(1);
    if (x[0] <= 0.0) {
      g[0] = 0.0;
      return std::numeric_limits<double>::infinity();
    }
    g[0] = 1.0 - 1.0 / x[0];
    return x[0] - std::log(x[0]);
  };
  const BfgsResult result = minimize_bfgs(fn, Eigen::VectorXd::Constant(1, 5.0));
  CHECK(result.converged);
  CHECK(std::abs(result.x[0] - 1.0) < 1e-7);
}

TEST_CASE("fd gradient helper") {
  const auto f = [](const Eigen::VectorXd& x) { return std::sin(x[0]) + x[1] * x[1]; };
  Eigen::VectorXd x(2);
  x << 0.3, -0.7;
  const Eigen::VectorXd g = fd_gradient(f, x);
  CHECK(g[0] == doctest::Approx(std::cos(0.3)).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(-1.4).epsilon(1e-8));
}

TEST_SUITE_END();

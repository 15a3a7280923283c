#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "simplexts/distributions.hpp"
#include "simplexts/special.hpp"
#include "test_util.hpp"

using namespace simplexts;

TEST_SUITE_BEGIN("distributions");

namespace {

DirichletParams params_from_alpha(const Eigen::VectorXd& alpha) {
  const double phi = alpha.sum();
  return DirichletParams(Composition(alpha / phi), phi);
}

// Midpoint (centroid) quadrature of exp(logpdf) over the d=3 simplex: the
// domain triangulates exactly into m^2 small triangles of area 1/(2 m^2).
double simplex3_quadrature(const std::function<double(const Composition&)>& logpdf, int m) {
  double total = 0.0;
  const double area = 0.5 / (m * static_cast<double>(m));
  const auto add = [&](double y1, double y2) {
    const double y3 = 1.0 - y1 - y2;
    total += std::exp(logpdf(Composition(Eigen::Vector3d(y1, y2, y3)))) * area;
  };
  for (int i = 0; i < m; ++i)
    for (int j = 0; j + i < m; ++j) {
      add((3 * i + 1) / (3.0 * m), (3 * j + 1) / (3.0 * m));           // lower triangle
      if (j + i < m - 1) add((3 * i + 2) / (3.0 * m), (3 * j + 2) / (3.0 * m));  // upper
    }
  return total;
}

double segment_quadrature(const std::function<double(const Composition&)>& logpdf, int cells) {
  double total = 0.0;
  const double h = 1.0 / cells;
  for (int i = 0; i < cells; ++i) {
    const double y1 = (i + 0.5) * h;
    total += std::exp(logpdf(Composition(Eigen::Vector2d(y1, 1.0 - y1)))) * h;
  }
  return total;
}

}  // namespace

TEST_CASE("dirichlet logpdf examples") {
  // alpha = (1,1,1): uniform density on S2 equals Gamma(3) = 2
  const DirichletParams flat = params_from_alpha(Eigen::Vector3d(1, 1, 1));
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const Composition y = testutil::random_composition(3, rng);
    CHECK(dirichlet_logpdf(flat, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  // Beta(2,1) at y1 = 0.75: density 2 * 0.75
  const DirichletParams beta21 = params_from_alpha(Eigen::Vector2d(2, 1));
  const double logpdf = dirichlet_logpdf(beta21, Composition(Eigen::Vector2d(0.75, 0.25)));
  CHECK(logpdf == doctest::Approx(std::log(1.5)).epsilon(1e-12));
  CHECK(logpdf == doctest::Approx(0.4054651081081644).epsilon(1e-12));
}

TEST_CASE("dirichlet density integrates to one") {
  // alpha_2 = 1.3 puts a derivative singularity on the y2 = 0 edge, so the
  // midpoint rule converges like h^1.3; a fine grid is needed for 1e-3
  const DirichletParams params = params_from_alpha(Eigen::Vector3d(2.5, 1.3, 4.0));
  const double mass = simplex3_quadrature(
      [&](const Composition& y) { return dirichlet_logpdf(params, y); }, 256);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));

  const DirichletParams beta = params_from_alpha(Eigen::Vector2d(2.2, 3.7));
  const double mass2 =
      segment_quadrature([&](const Composition& y) { return dirichlet_logpdf(beta, y); }, 2000);
  CHECK(mass2 == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("dirichlet gradient in alpha") {
  // psi(2) - psi(1) = 1 by the recurrence, so each component is 1 - log 2
  const DirichletParams unit = params_from_alpha(Eigen::Vector2d(1, 1));
  const Eigen::VectorXd g =
      dirichlet_logpdf_grad_alpha(unit, Composition(Eigen::Vector2d(0.5, 0.5)));
  CHECK(g[0] == doctest::Approx(1.0 + std::log(0.5)).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(1.0 + std::log(0.5)).epsilon(1e-12));

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.engine()() % 3);
    Eigen::VectorXd alpha(d);
    for (int i = 0; i < d; ++i) alpha[i] = 0.1 + 49.9 * rng.uniform();
    const Composition y = testutil::random_composition(d, rng);
    const auto f = [&](const Eigen::VectorXd& a) {
      return dirichlet_logpdf(params_from_alpha(a), y);
    };
    const Eigen::VectorXd analytic = dirichlet_logpdf_grad_alpha(params_from_alpha(alpha), y);
    CHECK(testutil::gradient_gap(f, alpha, analytic) < 1e-6);

    // chain-rule consistency along a random direction
    Eigen::VectorXd dir(d);
    for (int i = 0; i < d; ++i) dir[i] = rng.normal();
    const double h = 1e-6;
    const double directional =
        (f(alpha + h * dir) - f(alpha - h * dir)) / (2.0 * h);
    CHECK(directional == doctest::Approx(analytic.dot(dir)).epsilon(1e-4));
  }
}

TEST_CASE("dirichlet sampler moments") {
  const int draws = 100000;
  const DirichletParams params = params_from_alpha(Eigen::Vector3d(4, 3, 5));
  Rng rng(2024);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int i = 0; i < draws; ++i) {
    const Composition y = dirichlet_sample(params, rng);
    CHECK(y.dim() == 3);  // construction already enforces validity
    mean += y.values();
  }
  mean /= draws;
  const Eigen::Vector3d lambda(4.0 / 12, 3.0 / 12, 5.0 / 12);
  for (int i = 0; i < 3; ++i) {
    // Var(Y_i) = lambda_i (1-lambda_i) / (phi+1), phi = 12
    const double se = std::sqrt(lambda[i] * (1 - lambda[i]) / 13.0 / draws);
    CHECK(std::abs(mean[i] - lambda[i]) < 3 * se);
  }
}

TEST_CASE("dirichlet sampler total-variance identity") {
  const int draws = 100000;
  const Composition lambda(Eigen::Vector3d(0.5, 0.3, 0.2));
  const DirichletParams params(lambda, 2.0);
  Rng rng(99);
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  Eigen::Vector3d sumsq = Eigen::Vector3d::Zero();
  double sum4 = 0.0;  // for a rough SE of the variance sum
  for (int i = 0; i < draws; ++i) {
    const Eigen::Vector3d y = dirichlet_sample(params, rng).values();
    sum += y;
    sumsq += y.cwiseAbs2();
    sum4 += y.cwiseAbs2().sum() * y.cwiseAbs2().sum();
  }
  const Eigen::Vector3d mean = sum / draws;
  const double total_var = (sumsq / draws - mean.cwiseAbs2()).sum();
  const double expected = (1.0 - lambda.values().cwiseAbs2().sum()) / (2.0 + 1.0);
  // 3 MC standard errors of the summed-variance estimate
  const double se = 3.0 * std::sqrt((sum4 / draws) / draws);
  CHECK(std::abs(total_var - expected) < std::max(se, 3e-3));
  CHECK(expected == doctest::Approx(0.62 / 3).epsilon(1e-12));
}

TEST_CASE("logistic-normal logpdf") {
  // d=2, mu=0, sigma=1 at y=(0.5,0.5): alr(y)=0, Jacobian 1/(0.5*0.5)
  const LogisticNormalParams params(Eigen::VectorXd::Zero(1),
                                    Eigen::MatrixXd::Identity(1, 1));
  const double value = logistic_normal_logpdf(params, Composition(Eigen::Vector2d(0.5, 0.5)));
  CHECK(value == doctest::Approx(-0.5 * std::log(2 * M_PI) - std::log(0.25)).epsilon(1e-12));
  CHECK(value == doctest::Approx(0.4673558279152179).epsilon(1e-10));
}

TEST_CASE("logistic-normal equals gaussian plus jacobian") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.engine()() % 3);
    const int q = d - 1;
    Eigen::VectorXd mu(q);
    for (int i = 0; i < q; ++i) mu[i] = rng.normal();
    Eigen::MatrixXd G(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) G(i, j) = rng.normal();
    const Eigen::MatrixXd sigma = G * G.transpose() + 0.2 * Eigen::MatrixXd::Identity(q, q);
    const LogisticNormalParams params(mu, sigma);
    const Composition y = testutil::random_composition(d, rng);

    // dense Gaussian log-density as the reference route
    const Eigen::VectorXd r = alr(y) - mu;
    const double quad = r.dot(sigma.inverse() * r);
    const double gaussian =
        -0.5 * (q * std::log(2 * M_PI) + std::log(sigma.determinant()) + quad);
    const double jac = y.values().array().log().sum();
    CHECK(logistic_normal_logpdf(params, y) == doctest::Approx(gaussian - jac).epsilon(1e-9));
  }
}

TEST_CASE("logistic-normal density integrates to one") {
  const LogisticNormalParams params(Eigen::VectorXd::Constant(1, 0.4),
                                    Eigen::MatrixXd::Constant(1, 1, 0.7));
  const double mass = segment_quadrature(
      [&](const Composition& y) { return logistic_normal_logpdf(params, y); }, 2000);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("logistic-normal sampler moments") {
  const int draws = 100000;
  Eigen::VectorXd mu(2);
  mu << 0.4, -0.3;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 0.5, 0.2, 0.2, 0.4;
  const LogisticNormalParams params(mu, sigma);
  Rng rng(31);
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  for (int i = 0; i < draws; ++i) {
    const Eigen::Vector2d z = alr(logistic_normal_sample(params, rng));
    mean += z;
    second += z * z.transpose();
  }
  mean /= draws;
  const Eigen::Matrix2d cov = second / draws - mean * mean.transpose();
  for (int i = 0; i < 2; ++i) {
    const double se = std::sqrt(sigma(i, i) / draws);
    CHECK(std::abs(mean[i] - mu[i]) < 3 * se);
    for (int j = 0; j < 2; ++j) {
      // rough SE of a covariance entry
      const double sec = std::sqrt((sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j)) /
                                   draws);
      CHECK(std::abs(cov(i, j) - sigma(i, j)) < 3 * sec);
    }
  }
}

TEST_CASE("logpdfs are finite on valid inputs") {
  Rng rng(73);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 2 + static_cast<int>(rng.engine()() % 4);
    const Composition y = testutil::random_composition(d, rng);
    const Composition lambda = testutil::random_composition(d, rng);
    const double phi = std::exp(4.0 * rng.normal());
    CHECK(std::isfinite(dirichlet_logpdf(DirichletParams(lambda, phi), y)));

    Eigen::VectorXd mu(d - 1);
    for (int i = 0; i < d - 1; ++i) mu[i] = 3.0 * rng.normal();
    Eigen::MatrixXd G(d - 1, d - 1);
    for (int i = 0; i < d - 1; ++i)
      for (int j = 0; j < d - 1; ++j) G(i, j) = rng.normal();
    const Eigen::MatrixXd sigma =
        G * G.transpose() + 0.1 * Eigen::MatrixXd::Identity(d - 1, d - 1);
    CHECK(std::isfinite(logistic_normal_logpdf(LogisticNormalParams(mu, sigma), y)));
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(DirichletParams(Composition::uniform(3), 0.0), std::invalid_argument);
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // indefinite
  CHECK_THROWS_AS(LogisticNormalParams(Eigen::VectorXd::Zero(2), bad), std::invalid_argument);
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.3, 0.1, 1.0;
  CHECK_THROWS_AS(LogisticNormalParams(Eigen::VectorXd::Zero(2), asym), std::invalid_argument);
  Eigen::MatrixXd lower(2, 2);
  lower << 1.0, 0.0, 0.3, -0.5;
  CHECK_THROWS_AS(LogisticNormalParams::from_cholesky(Eigen::VectorXd::Zero(2), lower),
                  std::invalid_argument);
}

TEST_SUITE_END();

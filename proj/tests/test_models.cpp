#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <vector>

#include "simplexts/estimation.hpp"
#include "simplexts/models.hpp"
#include "test_util.hpp"

using namespace simplexts;

TEST_SUITE_BEGIN("models");

namespace {

// Brute-force spectral radius oracle: characteristic polynomial by
// Faddeev-LeVerrier, roots by Durand-Kerner.
double spectral_radius_oracle(const Eigen::MatrixXd& A) {
  const int n = static_cast<int>(A.rows());
  // char poly x^n + c[1] x^{n-1} + ... + c[n]
  std::vector<double> c(n + 1, 0.0);
  c[0] = 1.0;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k <= n; ++k) {
    M = A * M + c[k - 1] * Eigen::MatrixXd::Identity(n, n);
    c[k] = -(A * M).trace() / k;
  }
  using cd = std::complex<double>;
  std::vector<cd> roots(n);
  for (int i = 0; i < n; ++i) roots[i] = std::pow(cd(0.4, 0.9), i);  // distinct starts
  const auto poly = [&](cd x) {
    cd v = 0.0;
    for (int k = 0; k <= n; ++k) v = v * x + c[k];
    return v;
  };
  for (int iter = 0; iter < 2000; ++iter) {
    double shift = 0.0;
    for (int i = 0; i < n; ++i) {
      cd denom = 1.0;
      for (int j = 0; j < n; ++j)
        if (j != i) denom *= roots[i] - roots[j];
      const cd delta = poly(roots[i]) / denom;
      roots[i] -= delta;
      shift = std::max(shift, std::abs(delta));
    }
    if (shift < 1e-14) break;
  }
  double rho = 0.0;
  for (const auto& r : roots) rho = std::max(rho, std::abs(r));
  return rho;
}

DirichletFiniteSpec benchmark_spec() {
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

TEST_CASE("spectral radius basics") {
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(2, 2);
  diag(0, 0) = 0.3;
  diag(1, 1) = -0.9;
  CHECK(spectral_radius(diag) == doctest::Approx(0.9).epsilon(1e-12));

  Eigen::MatrixXd nilpotent = Eigen::MatrixXd::Zero(2, 2);
  nilpotent(0, 1) = 1.0;
  CHECK(spectral_radius(nilpotent) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(spectral_radius(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("spectral radius against the characteristic-polynomial oracle") {
  Rng rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::MatrixXd A(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) A(i, j) = rng.normal();
    CHECK(std::abs(spectral_radius(A) - spectral_radius_oracle(A)) < 1e-8);
  }
}

TEST_CASE("stationarity checks") {
  DirichletODSpec od;
  od.d = 3;
  od.C = Eigen::Vector2d(0.1, 0.2);
  od.A = Eigen::MatrixXd::Identity(2, 2);
  od.B = 0.5 * Eigen::MatrixXd::Identity(2, 2);
  od.c = 0.0;
  od.a = 0.1;
  od.b = 0.3;
  const StationarityReport ok = check_stationarity(od);
  CHECK(ok.satisfied);
  CHECK(ok.rho_B == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(ok.abs_b == doctest::Approx(0.3));
  CHECK(ok.margin() == doctest::Approx(0.5).epsilon(1e-10));

  od.b = 1.0;
  CHECK_FALSE(check_stationarity(od).satisfied);
  od.b = 0.3;

  // rho(B) = 1.02 with every |B_ij| < 1: scaled rotation
  const double angle = M_PI / 4;
  Eigen::MatrixXd rot(2, 2);
  rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  od.B = 1.02 * rot;
  CHECK(od.B.cwiseAbs().maxCoeff() < 1.0);
  CHECK_FALSE(check_stationarity(od).satisfied);

  // finite-order specs are vacuously stationary
  CHECK(check_stationarity(benchmark_spec()).satisfied);
}

TEST_CASE("dirichlet finite filter") {
  Rng rng(1);
  const auto data = testutil::random_compositions(20, 3, rng);

  // constant-parameter case
  DirichletFiniteSpec constant;
  constant.d = 3;
  constant.p = 1;
  constant.A0 = Eigen::Vector2d(0.4, -0.7);
  constant.A = {Eigen::MatrixXd::Zero(2, 2)};
  constant.a0 = 0.8;
  constant.a = {0.0};
  const LatentPath path = filter_dirichlet_finite(constant, data);
  CHECK(path.start == 1);
  CHECK(path.end() == 20);
  const Composition lambda = alr_inv(constant.A0);
  for (int t = 1; t < 20; ++t) {
    CHECK((path.lambda_at(t).values() - lambda.values()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(path.phi_at(t) == doctest::Approx(std::exp(0.8)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(path.mu_at(0), std::out_of_range);

  // hand evaluation at the uniform previous composition
  const DirichletFiniteSpec spec = benchmark_spec();
  std::vector<Composition> two = {Composition::uniform(3), Composition::uniform(3)};
  const LatentPath hand = filter_dirichlet_finite(spec, two);
  CHECK(hand.mu_at(1)[0] == doctest::Approx(-1.0 + 7.0 / 3).epsilon(1e-14));
  CHECK(hand.mu_at(1)[1] == doctest::Approx(-2.0 + 8.0 / 3).epsilon(1e-14));
  CHECK(hand.phi_at(1) ==
        doctest::Approx(std::exp(1.5 + 0.7 * std::log(3.0))).epsilon(1e-14));

  // determinism, bitwise
  const LatentPath again = filter_dirichlet_finite(spec, data);
  const LatentPath again2 = filter_dirichlet_finite(spec, data);
  for (int t = 1; t < 20; ++t) {
    CHECK(again.mu_at(t) == again2.mu_at(t));
    CHECK(again.phi_at(t) == again2.phi_at(t));
  }

  CHECK_THROWS_AS(filter_dirichlet_finite(spec, {Composition::uniform(3)}),
                  std::invalid_argument);
}

TEST_CASE("dirichlet od filter") {
  Rng rng(2);
  const auto data = testutil::random_compositions(50, 3, rng);

  DirichletODSpec od;
  od.d = 3;
  od.C = Eigen::Vector2d(-1.0, -2.0);
  od.A = (Eigen::MatrixXd(2, 2) << 4.0, 3.0, 3.0, 5.0).finished();
  od.B = Eigen::MatrixXd::Zero(2, 2);
  od.c = 1.5;
  od.a = 0.7;
  od.b = 0.0;

  SUBCASE("collapses to the finite filter when B = 0, b = 0") {
    const LatentPath odp = filter_dirichlet_od(od, data, LatentInit::zeros(3));
    const LatentPath fin = filter_dirichlet_finite(benchmark_spec(), data);
    for (int t = 1; t < 50; ++t) {
      CHECK(odp.mu_at(t) == fin.mu_at(t));  // exact: recursion adds exact zeros
      CHECK(odp.phi_at(t) == fin.phi_at(t));
    }
    // t = 0 carries the init
    CHECK(odp.mu_at(0).isZero());
    CHECK(odp.phi_at(0) == doctest::Approx(1.0));
  }

  SUBCASE("geometric forgetting of the init") {
    od.B = 0.5 * Eigen::MatrixXd::Identity(2, 2);
    od.b = 0.4;
    LatentInit one = LatentInit::zeros(3);
    LatentInit other{Eigen::Vector2d(0.3, -0.2), 0.1};
    const LatentPath p1 = filter_dirichlet_od(od, data, one);
    const LatentPath p2 = filter_dirichlet_od(od, data, other);
    const double delta0 = (p1.mu_at(0) - p2.mu_at(0)).norm();
    const double delta40 = (p1.mu_at(40) - p2.mu_at(40)).norm();
    // |B^t delta| with rho(B) = 0.5: 0.5^40 ~ 9e-13
    CHECK(delta40 < 1e-10 * delta0);
  }

  SUBCASE("constant data converges to the fixed point") {
    od.B = (Eigen::MatrixXd(2, 2) << 0.4, 0.1, -0.1, 0.3).finished();
    const Composition ystar(Eigen::Vector3d(0.5, 0.3, 0.2));
    std::vector<Composition> constant(200, ystar);
    const LatentPath path = filter_dirichlet_od(od, constant, LatentInit::zeros(3));
    // oracle: solve (I - B) mu = C + A h1(y*)
    const Eigen::VectorXd target =
        (Eigen::MatrixXd::Identity(2, 2) - od.B)
            .colPivHouseholderQr()
            .solve(od.C + od.A * h1(ystar));
    CHECK((path.mu_at(199) - target).norm() < 1e-10);
  }
}

TEST_CASE("logistic-normal filters") {
  Rng rng(3);
  const auto data = testutil::random_compositions(30, 3, rng);

  LogisticNormalFiniteSpec fin;
  fin.d = 3;
  fin.p = 1;
  fin.A0 = Eigen::Vector2d(0.2, -0.1);
  fin.A = {(Eigen::MatrixXd(2, 2) << 0.5, 0.1, 0.0, 0.4).finished()};
  fin.a = {0.0};
  fin.chol_V = Eigen::MatrixXd::Identity(2, 2);

  const LatentPath path = filter_ln_finite(fin, data);
  for (int t = 1; t < 30; ++t) CHECK(path.phi_at(t) == 1.0);  // a = 0 means Sigma_t = V

  LogisticNormalODSpec od;
  od.d = 3;
  od.C = fin.A0;
  od.A = fin.A[0];
  od.B = Eigen::MatrixXd::Zero(2, 2);
  od.a = 0.0;
  od.b = 0.0;
  od.chol_V = fin.chol_V;
  const LatentPath odp = filter_ln_od(od, data, LatentInit::zeros(3));
  for (int t = 1; t < 30; ++t) {
    CHECK(odp.mu_at(t) == path.mu_at(t));
    CHECK(odp.phi_at(t) == path.phi_at(t));
  }
}

TEST_CASE("simulate basics") {
  const DirichletFiniteSpec spec = benchmark_spec();
  Rng rng(11);
  const auto path = simulate(spec, 1000, 100, rng);
  CHECK(path.size() == 1000);
  for (const auto& y : path) {
    CHECK(y.dim() == 3);
    CHECK(y.values().minCoeff() > 0.0);
    CHECK(y.values().sum() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("simulate iid case matches alr_inv(A0)") {
  DirichletFiniteSpec spec;
  spec.d = 3;
  spec.p = 1;
  spec.A0 = Eigen::Vector2d(0.3, -0.4);
  spec.A = {Eigen::MatrixXd::Zero(2, 2)};
  spec.a0 = std::log(8.0);
  spec.a = {0.0};
  const Composition lambda = alr_inv(spec.A0);
  Rng rng(21);
  const int n = 50000;
  const auto path = simulate(spec, n, 10, rng);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& y : path) mean += y.values();
  mean /= n;
  for (int i = 0; i < 3; ++i) {
    const double se = std::sqrt(lambda[i] * (1 - lambda[i]) / 9.0 / n);
    CHECK(std::abs(mean[i] - lambda[i]) < 3 * se);
  }
}

TEST_CASE("simulate rejects non-stationary od specs") {
  DirichletODSpec od;
  od.d = 3;
  od.C = Eigen::Vector2d(0.0, 0.0);
  od.A = 0.1 * Eigen::MatrixXd::Identity(2, 2);
  od.B = Eigen::MatrixXd::Zero(2, 2);
  od.c = 0.0;
  od.a = 0.0;
  od.b = 1.01;
  Rng rng(4);
  CHECK_THROWS_AS(simulate(od, 10, 0, rng), std::domain_error);
}

TEST_CASE("stepper matches the od filter") {
  DirichletODSpec od;
  od.d = 3;
  od.C = Eigen::Vector2d(0.2, -0.3);
  od.A = (Eigen::MatrixXd(2, 2) << 1.0, 0.5, 0.2, 0.8).finished();
  od.B = 0.3 * Eigen::MatrixXd::Identity(2, 2);
  od.c = 0.4;
  od.a = 0.5;
  od.b = 0.2;
  Rng rng(9);
  const auto data = testutil::random_compositions(25, 3, rng);
  const LatentPath path = filter_dirichlet_od(od, data, LatentInit::zeros(3));

  Stepper stepper((ModelSpec(od)));
  for (int t = 0; t < 25; ++t) {
    CHECK((stepper.next_mu() - path.mu_at(t)).norm() < 1e-14);
    CHECK(stepper.next_phi() == doctest::Approx(path.phi_at(t)).epsilon(1e-14));
    stepper.advance(data[t]);
  }
}

TEST_CASE("latent paths stay finite under stationary specs") {
  Rng rng(77);
  int done = 0;
  while (done < 20) {
    DirichletODSpec od;
    od.d = 3;
    od.C = Eigen::Vector2d(rng.normal(), rng.normal());
    od.A.resize(2, 2);
    od.B.resize(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        od.A(i, j) = 1.5 * rng.normal();
        od.B(i, j) = 0.4 * rng.normal();
      }
    od.c = rng.normal();
    od.a = rng.normal();
    od.b = 0.9 * std::tanh(rng.normal());
    if (!check_stationarity(ModelSpec(od)).satisfied) continue;
    ++done;
    const auto data = testutil::random_compositions(200, 3, rng);
    const LatentPath path = filter_dirichlet_od(od, data, LatentInit::zeros(3));
    for (int t = 0; t < 200; ++t) {
      CHECK(path.mu_at(t).allFinite());
      CHECK(std::isfinite(path.phi_at(t)));
      CHECK(path.phi_at(t) > 0.0);
    }
  }
}

TEST_CASE("long burn-in erases the initial state from the first two moments") {
  const DirichletFiniteSpec spec = benchmark_spec();
  const int n = 20000;
  const auto run = [&](std::uint64_t seed, const Composition& init) {
    Rng rng(seed);
    const auto path = simulate(spec, n, 10000, rng, init);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector3d second = Eigen::Vector3d::Zero();
    for (const auto& y : path) {
      mean += y.values();
      second += y.values().cwiseAbs2();
    }
    return std::make_pair(Eigen::Vector3d(mean / n), Eigen::Vector3d(second / n));
  };
  const auto a = run(501, Composition::uniform(3));
  const auto b = run(502, Composition(Eigen::Vector3d(0.90, 0.05, 0.05)));
  // dependent-series MC error: scale the iid standard error by a spread factor
  for (int i = 0; i < 3; ++i) {
    const double se = 3.0 * std::sqrt(0.25 / n) * 4.0;
    CHECK(std::abs(a.first[i] - b.first[i]) < se);
    CHECK(std::abs(a.second[i] - b.second[i]) < se);
  }
}

TEST_CASE("spec serialization fields are validated") {
  DirichletFiniteSpec bad = benchmark_spec();
  bad.A0 = Eigen::VectorXd::Zero(3);  // wrong length
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  DirichletFiniteSpec bad2 = benchmark_spec();
  bad2.a.clear();
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}

TEST_SUITE_END();

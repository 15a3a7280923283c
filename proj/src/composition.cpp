#include "simplexts/composition.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace simplexts {

namespace {

constexpr double kSumRepairTol = 1e-6;
constexpr double kProbFloor = 1e-15;

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

}  // namespace

Composition::Composition(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() < 2) fail("Composition needs at least 2 coordinates");
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const double v = values_[i];
    if (!(v > 0.0) || !std::isfinite(v)) {
      std::ostringstream os;
      os << "Composition coordinate " << i << " not strictly positive: " << v;
      fail(os.str());
    }
  }
  const double sum = values_.sum();
  if (std::abs(sum - 1.0) >= kSumRepairTol) {
    std::ostringstream os;
    os << "Composition coordinates sum to " << sum << ", too far from 1";
    fail(os.str());
  }
  if (sum != 1.0) values_ /= sum;
}

Composition Composition::uniform(int d) {
  if (d < 2) fail("Composition needs at least 2 coordinates");
  return Composition(Eigen::VectorXd::Constant(d, 1.0 / d));
}

PerturbationVector::PerturbationVector(Eigen::VectorXd gamma) : gamma_(std::move(gamma)) {
  if (gamma_.size() < 2) fail("PerturbationVector needs at least 2 coordinates");
  if (!gamma_.allFinite()) fail("PerturbationVector coordinates must be finite");
  const double sum = gamma_.sum();
  if (std::abs(sum) > 1e-12) {
    std::ostringstream os;
    os << "PerturbationVector coordinates sum to " << sum << ", expected 0";
    fail(os.str());
  }
}

PerturbationVector PerturbationVector::zero(int d) {
  return PerturbationVector(Eigen::VectorXd::Zero(d));
}

Eigen::VectorXd alr(const Composition& y) {
  const int d = y.dim();
  const double log_ref = std::log(y[d - 1]);
  Eigen::VectorXd z(d - 1);
  for (int i = 0; i < d - 1; ++i) z[i] = std::log(y[i]) - log_ref;
  return z;
}

Eigen::VectorXd alr_inv_log(const Eigen::VectorXd& z) {
  const int q = static_cast<int>(z.size());
  if (q < 1) throw std::invalid_argument("alr_inv needs at least one coordinate");
  if (!z.allFinite()) throw std::invalid_argument("alr_inv requires finite input");
  // log-sum-exp over {0, z_1, ..., z_q}; the implicit 0 is the reference.
  double m = 0.0;
  for (int i = 0; i < q; ++i) m = std::max(m, z[i]);
  double acc = std::exp(-m);
  for (int i = 0; i < q; ++i) acc += std::exp(z[i] - m);
  const double lse = m + std::log(acc);
  Eigen::VectorXd logy(q + 1);
  for (int i = 0; i < q; ++i) logy[i] = z[i] - lse;
  logy[q] = -lse;
  return logy;
}

Composition alr_inv(const Eigen::VectorXd& z) {
  const Eigen::VectorXd logy = alr_inv_log(z);
  Eigen::VectorXd y = logy.array().exp();
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = std::max(y[i], kProbFloor);
  y /= y.sum();
  return Composition(std::move(y));
}

Eigen::VectorXd h1(const Composition& y) { return y.values().head(y.dim() - 1); }

double shannon_entropy(const Composition& y) {
  double h = 0.0;
  for (int i = 0; i < y.dim(); ++i) h -= y[i] * std::log(y[i]);
  return h;
}

PerturbationVector build_perturbation(int d, int i, int j, double c, double p) {
  if (d < 2) fail("build_perturbation: d must be at least 2");
  if (i == j) fail("build_perturbation: i and j must differ");
  if (i < 0 || i >= d - 1 || j < 0 || j >= d - 1)
    fail("build_perturbation: i and j must be in [0, d-1) (the last coordinate is the reference)");
  if (!(c >= 0.0 && c <= 1.0)) fail("build_perturbation: c must lie in [0, 1]");
  if (!(p > 0.0)) fail("build_perturbation: p must be positive");
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(d);
  gamma[i] = -c * p;
  gamma[d - 1] = p;
  gamma[j] = -(gamma[i] + p);  // (c-1)*p, arranged so the sum is exactly zero
  return PerturbationVector(std::move(gamma));
}

Composition perturb(const Composition& y, const PerturbationVector& gamma) {
  if (y.dim() != gamma.dim()) fail("perturb: dimension mismatch");
  Eigen::VectorXd v = y.values() + gamma.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      std::ostringstream os;
      os << "perturbation drives coordinate " << i << " to " << v[i];
      throw std::domain_error(os.str());
    }
  }
  return Composition(std::move(v));
}

}  // namespace simplexts

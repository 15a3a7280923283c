#pragma once

#include <Eigen/Core>

namespace simplexts {

/// A point of the open simplex: d >= 2 strictly positive proportions that
/// sum to one. Constructors renormalize when |sum - 1| < 1e-6 (CSV-derived
/// proportions carry rounding error) and reject larger deviations.
class Composition {
 public:
  explicit Composition(Eigen::VectorXd values);

  static Composition uniform(int d);

  int dim() const { return static_cast<int>(values_.size()); }
  double operator[](int i) const { return values_[i]; }
  const Eigen::VectorXd& values() const { return values_; }

  bool operator==(const Composition& other) const { return values_ == other.values_; }

 private:
  Eigen::VectorXd values_;
};

/// Additive perturbation of a composition: d reals summing to zero
/// (tolerance 1e-12). Positivity of the perturbed composition is the
/// caller's concern; see perturb().
class PerturbationVector {
 public:
  explicit PerturbationVector(Eigen::VectorXd gamma);

  static PerturbationVector zero(int d);

  int dim() const { return static_cast<int>(gamma_.size()); }
  double operator[](int i) const { return gamma_[i]; }
  const Eigen::VectorXd& values() const { return gamma_; }

 private:
  Eigen::VectorXd gamma_;
};

/// Additive log-ratio transform: (log(y_1/y_d), ..., log(y_{d-1}/y_d)).
Eigen::VectorXd alr(const Composition& y);

/// Inverse alr (softmax with implicit reference coordinate). Overflow is
/// guarded by a max shift; output coordinates are floored at 1e-15 so the
/// result is a valid Composition for any finite input.
Composition alr_inv(const Eigen::VectorXd& z);

/// Log coordinates of alr_inv(z), computed exactly via log-sum-exp
/// (no positivity floor). Returns a vector of length z.size() + 1.
Eigen::VectorXd alr_inv_log(const Eigen::VectorXd& z);

/// First d-1 coordinates of y.
Eigen::VectorXd h1(const Composition& y);

/// Shannon entropy -sum y_i log y_i, in (0, log d].
double shannon_entropy(const Composition& y);

/// The structured zero-sum perturbation raising the reference coordinate
/// (the last one, index d-1) by p at the expense of species i and j:
/// gamma_i = -c*p, gamma_j = (c-1)*p, gamma_{d-1} = p, zeros elsewhere.
/// i and j are 0-based, distinct, and must not be the reference.
PerturbationVector build_perturbation(int d, int i, int j, double c, double p);

/// y + gamma, rejecting the result if any coordinate is not strictly positive.
Composition perturb(const Composition& y, const PerturbationVector& gamma);

}  // namespace simplexts

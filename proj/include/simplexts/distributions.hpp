#pragma once

#include <Eigen/Core>

#include "simplexts/composition.hpp"
#include "simplexts/rng.hpp"

namespace simplexts {

/// Dirichlet conditional law in mean/scale form: alpha_i = lambda_i * phi.
struct DirichletParams {
  Composition lambda;
  double phi;

  DirichletParams(Composition lambda_, double phi_);

  int dim() const { return lambda.dim(); }
  Eigen::VectorXd alpha() const { return lambda.values() * phi; }
};

/// Multivariate logistic-normal law of a d-composition: alr(Y) ~ N(mu, Sigma)
/// with mu in R^{d-1}. Sigma is carried as its lower-triangular Cholesky
/// factor with strictly positive diagonal.
class LogisticNormalParams {
 public:
  /// Factorizes sigma, rejecting non-SPD matrices.
  LogisticNormalParams(Eigen::VectorXd mu, const Eigen::MatrixXd& sigma);

  static LogisticNormalParams from_cholesky(Eigen::VectorXd mu, Eigen::MatrixXd chol_lower);

  int dim() const { return static_cast<int>(mu_.size()) + 1; }
  const Eigen::VectorXd& mu() const { return mu_; }
  const Eigen::MatrixXd& chol() const { return chol_; }
  Eigen::MatrixXd sigma() const { return chol_ * chol_.transpose(); }

 private:
  LogisticNormalParams() = default;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd chol_;  // lower triangular
};

/// log Gamma(phi) - sum log Gamma(alpha_i) + sum (alpha_i - 1) log y_i.
double dirichlet_logpdf(const DirichletParams& params, const Composition& y);

/// Gradient of dirichlet_logpdf in the alpha parameterization:
/// component i is psi(phi) - psi(alpha_i) + log y_i.
Eigen::VectorXd dirichlet_logpdf_grad_alpha(const DirichletParams& params, const Composition& y);

/// Draw via d independent Gamma(alpha_i, 1) variates normalized by their sum.
Composition dirichlet_sample(const DirichletParams& params, Rng& rng);

/// Gaussian logpdf at alr(y) plus the change-of-variables term -sum log y_i.
double logistic_normal_logpdf(const LogisticNormalParams& params, const Composition& y);

/// Draw z ~ N(mu, Sigma) through the Cholesky factor, return alr_inv(z).
Composition logistic_normal_sample(const LogisticNormalParams& params, Rng& rng);

}  // namespace simplexts

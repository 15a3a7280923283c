#include "simplexts/distributions.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>

#include "simplexts/special.hpp"

namespace simplexts {

DirichletParams::DirichletParams(Composition lambda_, double phi_)
    : lambda(std::move(lambda_)), phi(phi_) {
  if (!(phi > 0.0) || !std::isfinite(phi))
    throw std::invalid_argument("DirichletParams: phi must be strictly positive");
}

LogisticNormalParams::LogisticNormalParams(Eigen::VectorXd mu, const Eigen::MatrixXd& sigma)
    : mu_(std::move(mu)) {
  if (sigma.rows() != sigma.cols() || sigma.rows() != mu_.size())
    throw std::invalid_argument("LogisticNormalParams: dimension mismatch");
  if (!sigma.isApprox(sigma.transpose(), 1e-10))
    throw std::invalid_argument("LogisticNormalParams: sigma must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("LogisticNormalParams: sigma is not positive definite");
  chol_ = llt.matrixL();
}

LogisticNormalParams LogisticNormalParams::from_cholesky(Eigen::VectorXd mu,
                                                         Eigen::MatrixXd chol_lower) {
  if (chol_lower.rows() != chol_lower.cols() || chol_lower.rows() != mu.size())
    throw std::invalid_argument("LogisticNormalParams: dimension mismatch");
  for (Eigen::Index i = 0; i < chol_lower.rows(); ++i) {
    if (!(chol_lower(i, i) > 0.0))
      throw std::invalid_argument("LogisticNormalParams: Cholesky diagonal must be positive");
    for (Eigen::Index j = i + 1; j < chol_lower.cols(); ++j) chol_lower(i, j) = 0.0;
  }
  LogisticNormalParams p;
  p.mu_ = std::move(mu);
  p.chol_ = std::move(chol_lower);
  return p;
}

double dirichlet_logpdf(const DirichletParams& params, const Composition& y) {
  if (y.dim() != params.dim()) throw std::invalid_argument("dirichlet_logpdf: dimension mismatch");
  const Eigen::VectorXd alpha = params.alpha();
  double value = lgamma(params.phi);
  for (int i = 0; i < y.dim(); ++i) {
    value -= lgamma(alpha[i]);
    value += (alpha[i] - 1.0) * std::log(y[i]);
  }
  return value;
}

Eigen::VectorXd dirichlet_logpdf_grad_alpha(const DirichletParams& params, const Composition& y) {
  if (y.dim() != params.dim())
    throw std::invalid_argument("dirichlet_logpdf_grad_alpha: dimension mismatch");
  const Eigen::VectorXd alpha = params.alpha();
  const double psi_phi = digamma(params.phi);
  Eigen::VectorXd grad(y.dim());
  for (int i = 0; i < y.dim(); ++i) grad[i] = psi_phi - digamma(alpha[i]) + std::log(y[i]);
  return grad;
}

Composition dirichlet_sample(const DirichletParams& params, Rng& rng) {
  const Eigen::VectorXd alpha = params.alpha();
  Eigen::VectorXd draws(alpha.size());
  for (Eigen::Index i = 0; i < alpha.size(); ++i)
    draws[i] = std::max(rng.gamma(alpha[i]), 1e-300);
  draws /= draws.sum();
  return Composition(std::move(draws));
}

double logistic_normal_logpdf(const LogisticNormalParams& params, const Composition& y) {
  if (y.dim() != params.dim())
    throw std::invalid_argument("logistic_normal_logpdf: dimension mismatch");
  const int q = y.dim() - 1;
  const Eigen::VectorXd r = alr(y) - params.mu();
  const Eigen::MatrixXd& L = params.chol();
  const Eigen::VectorXd w = L.triangularView<Eigen::Lower>().solve(r);
  double log_det = 0.0;
  for (int i = 0; i < q; ++i) log_det += std::log(L(i, i));
  double jacobian = 0.0;
  for (int i = 0; i < y.dim(); ++i) jacobian += std::log(y[i]);
  return -0.5 * q * 1.8378770664093454836 /* log(2*pi) */ - log_det - 0.5 * w.squaredNorm() -
         jacobian;
}

Composition logistic_normal_sample(const LogisticNormalParams& params, Rng& rng) {
  const int q = params.dim() - 1;
  Eigen::VectorXd z(q);
  for (int i = 0; i < q; ++i) z[i] = rng.normal();
  const Eigen::VectorXd draw = params.mu() + params.chol() * z;
  return alr_inv(draw);
}

}  // namespace simplexts

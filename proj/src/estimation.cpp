#include "simplexts/estimation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "simplexts/optimize.hpp"
#include "simplexts/special.hpp"
#include "simplexts/util.hpp"

namespace simplexts {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

std::string idx1(int i) { return std::to_string(i + 1); }

// Kahan accumulator for the criterion sums: the optimizer's line search must
// resolve objective differences near machine precision, and plain sequential
// summation over thousands of terms floats the noise floor above it.
struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

// ---------------------------------------------------------------------------
// Shared design matrices for finite-order models.
// ---------------------------------------------------------------------------
struct FiniteDesign {
  int d = 0, p = 0, n = 0, m = 0, q = 0;
  Eigen::MatrixXd X;     // m x (1 + p*q): intercept, h1(y_{t-1}), ..., h1(y_{t-p})
  Eigen::MatrixXd W;     // m x (1 + p):   intercept, h2(y_{t-1}), ..., h2(y_{t-p})
  Eigen::MatrixXd Y1;    // m x q: first q coordinates of y_t
  Eigen::MatrixXd logY;  // m x d
  Eigen::MatrixXd Z;     // m x q: alr(y_t)
};

FiniteDesign build_design(const std::vector<Composition>& data, int p) {
  if (p < 1) fail("estimation: order p must be at least 1");
  const int n = static_cast<int>(data.size());
  if (n <= p) fail("estimation: need more observations than the order p");
  FiniteDesign dsg;
  dsg.d = data[0].dim();
  dsg.q = dsg.d - 1;
  dsg.p = p;
  dsg.n = n;
  dsg.m = n - p;
  dsg.X.resize(dsg.m, 1 + p * dsg.q);
  dsg.W.resize(dsg.m, 1 + p);
  dsg.Y1.resize(dsg.m, dsg.q);
  dsg.logY.resize(dsg.m, dsg.d);
  dsg.Z.resize(dsg.m, dsg.q);
  for (int t = p; t < n; ++t) {
    if (data[t].dim() != dsg.d) fail("estimation: data dimensions differ");
    const int r = t - p;
    dsg.X(r, 0) = 1.0;
    dsg.W(r, 0) = 1.0;
    for (int k = 1; k <= p; ++k) {
      dsg.X.block(r, 1 + (k - 1) * dsg.q, 1, dsg.q) = h1(data[t - k]).transpose();
      dsg.W(r, k) = shannon_entropy(data[t - k]);
    }
    dsg.Y1.row(r) = data[t].values().head(dsg.q).transpose();
    dsg.logY.row(r) = data[t].values().array().log().matrix().transpose();
    dsg.Z.row(r) = alr(data[t]).transpose();
  }
  return dsg;
}

// Mean block as a q x (1 + pmean*q) matrix; theta layout [A0 | vecA_1 | ...],
// matrices row-major.
Eigen::MatrixXd mean_matrix(const Eigen::VectorXd& theta, int q, int pmean) {
  Eigen::MatrixXd M(q, 1 + pmean * q);
  M.col(0) = theta.head(q);
  for (int k = 0; k < pmean; ++k)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) M(i, 1 + k * q + j) = theta[q + k * q * q + i * q + j];
  return M;
}

void mean_grad_to_packed(const Eigen::MatrixXd& Mgrad, int q, int pmean, double scale,
                         Eigen::Ref<Eigen::VectorXd> out) {
  out.head(q) = scale * Mgrad.col(0);
  for (int k = 0; k < pmean; ++k)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) out[q + k * q * q + i * q + j] = scale * Mgrad(i, 1 + k * q + j);
}

// log-sum-exp over {0, u_1, ..., u_q} and the log simplex coordinates.
double lse_with_reference(const Eigen::Ref<const Eigen::RowVectorXd>& u) {
  double mx = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) mx = std::max(mx, u[i]);
  double acc = std::exp(-mx);
  for (Eigen::Index i = 0; i < u.size(); ++i) acc += std::exp(u[i] - mx);
  return mx + std::log(acc);
}

// Per-observation Dirichlet log-density and gradient pieces at latent
// (mu, s = log phi). Returns false when the parameters leave the domain
// where lgamma/digamma are defined (the caller reports +inf).
bool dirichlet_obs(const Eigen::Ref<const Eigen::RowVectorXd>& mu, double s,
                   const Eigen::Ref<const Eigen::RowVectorXd>& logy, double& ell,
                   Eigen::Ref<Eigen::RowVectorXd> Gmu, double& Gs) {
  const int q = static_cast<int>(mu.size());
  if (!mu.allFinite() || !std::isfinite(s)) return false;
  const double lse = lse_with_reference(mu);
  const double phi = std::exp(s);
  if (!(phi > 0.0) || !std::isfinite(phi)) return false;

  double value = lgamma(phi);
  double gbar = 0.0;
  const double psi_phi = digamma(phi);
  Eigen::RowVectorXd lambda(q + 1);
  Eigen::RowVectorXd g(q + 1);
  for (int i = 0; i <= q; ++i) {
    const double loglam = (i < q ? mu[i] : 0.0) - lse;
    const double alpha = std::exp(s + loglam);
    if (!(alpha > 0.0) || !std::isfinite(alpha)) return false;
    value += -lgamma(alpha) + (alpha - 1.0) * logy[i];
    lambda[i] = std::exp(loglam);
    g[i] = psi_phi - digamma(alpha) + logy[i];
    gbar += lambda[i] * g[i];
  }
  if (!std::isfinite(value)) return false;
  ell = value;
  for (int i = 0; i < q; ++i) Gmu[i] = phi * lambda[i] * (g[i] - gbar);
  Gs = phi * gbar;
  return true;
}

// ---------------------------------------------------------------------------
// Finite-order Dirichlet likelihood with optional masks:
//   pmean = 0 constrains all lag matrices to zero,
//   use_a0/pdisp control the dispersion block,
//   fixed_logphi replaces the dispersion model entirely.
// ---------------------------------------------------------------------------
struct DirichletFiniteEvaluator {
  const FiniteDesign& dsg;
  int pmean;
  bool use_a0;
  int pdisp;
  std::optional<double> fixed_logphi;

  int mean_cols() const { return 1 + pmean * dsg.q; }
  int mean_dim() const { return dsg.q * mean_cols(); }
  int disp_dim() const { return fixed_logphi ? 0 : (use_a0 ? 1 : 0) + pdisp; }
  int dim() const { return mean_dim() + disp_dim(); }

  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad,
                    Eigen::MatrixXd* scores = nullptr) const {
    const int q = dsg.q, m = dsg.m;
    grad.setZero(dim());
    const Eigen::MatrixXd M = mean_matrix(theta, q, pmean);
    const auto Xm = dsg.X.leftCols(mean_cols());
    const Eigen::MatrixXd U = Xm * M.transpose();

    Eigen::VectorXd s(m);
    const int dcols = (use_a0 ? 1 : 0) + pdisp;
    Eigen::MatrixXd Wd;
    if (fixed_logphi) {
      s.setConstant(*fixed_logphi);
    } else {
      Wd.resize(m, dcols);
      int c = 0;
      if (use_a0) Wd.col(c++) = dsg.W.col(0);
      for (int k = 1; k <= pdisp; ++k) Wd.col(c++) = dsg.W.col(k);
      s = Wd * theta.tail(dcols);
    }

    KahanSum value;
    Eigen::MatrixXd Gmu(m, q);
    Eigen::VectorXd Gs(m);
    Eigen::RowVectorXd gmu_row(q);
    if (scores != nullptr) scores->setZero(m, dim());
    for (int r = 0; r < m; ++r) {
      double ell, gs;
      if (!dirichlet_obs(U.row(r), s[r], dsg.logY.row(r), ell, gmu_row, gs)) {
        grad.setZero();
        return kInf;
      }
      value.add(ell);
      Gmu.row(r) = gmu_row;
      Gs[r] = gs;
    }
    // objective: negative mean log-likelihood
    Eigen::MatrixXd Mgrad = Gmu.transpose() * Xm;
    mean_grad_to_packed(Mgrad, q, pmean, -1.0 / m, grad.head(mean_dim()));
    if (!fixed_logphi && dcols > 0) grad.tail(dcols) = -(Gs.transpose() * Wd).transpose() / m;
    if (scores != nullptr) {
      for (int r = 0; r < m; ++r) {
        Eigen::MatrixXd Mg = Gmu.row(r).transpose() * Xm.row(r);
        Eigen::VectorXd row(dim());
        mean_grad_to_packed(Mg, q, pmean, -1.0, row.head(mean_dim()));
        if (!fixed_logphi && dcols > 0) row.tail(dcols) = -Gs[r] * Wd.row(r).transpose();
        scores->row(r) = row.transpose();
      }
    }
    return -value.sum / m;
  }
};

// ---------------------------------------------------------------------------
// Convex contrast over the mean block of the finite-order model.
// ---------------------------------------------------------------------------
struct ContrastEvaluator {
  const FiniteDesign& dsg;

  int dim() const { return dsg.q * (1 + dsg.p * dsg.q); }

  double operator()(const Eigen::VectorXd& theta1, Eigen::VectorXd& grad) const {
    const int q = dsg.q, m = dsg.m;
    const Eigen::MatrixXd M = mean_matrix(theta1, q, dsg.p);
    const Eigen::MatrixXd U = dsg.X * M.transpose();
    KahanSum value;
    Eigen::MatrixXd Gmu(m, q);
    for (int r = 0; r < m; ++r) {
      const double lse = lse_with_reference(U.row(r));
      value.add(lse - dsg.Y1.row(r).dot(U.row(r)));
      for (int i = 0; i < q; ++i) Gmu(r, i) = std::exp(U(r, i) - lse) - dsg.Y1(r, i);
    }
    grad.resize(dim());
    mean_grad_to_packed(Gmu.transpose() * dsg.X, q, dsg.p, 1.0 / m, grad);
    return value.sum / m;
  }
};

// ---------------------------------------------------------------------------
// Cholesky block: lower triangle row-major, diagonal stored in log.
// ---------------------------------------------------------------------------
int chol_dim(int q) { return q * (q + 1) / 2; }

Eigen::MatrixXd chol_from_packed(const Eigen::Ref<const Eigen::VectorXd>& v, int q) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
  int c = 0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j <= i; ++j, ++c) L(i, j) = (i == j) ? std::exp(v[c]) : v[c];
  return L;
}

Eigen::VectorXd chol_to_packed(const Eigen::MatrixXd& L) {
  const int q = static_cast<int>(L.rows());
  Eigen::VectorXd v(chol_dim(q));
  int c = 0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j <= i; ++j, ++c) v[c] = (i == j) ? std::log(L(i, j)) : L(i, j);
  return v;
}

// d(objective)/d(packed Cholesky) from G = d(objective)/dV with V = L L'.
Eigen::VectorXd chol_grad_from_matrix(const Eigen::MatrixXd& G, const Eigen::MatrixXd& L) {
  const int q = static_cast<int>(L.rows());
  const Eigen::MatrixXd P = 2.0 * G * L;
  Eigen::VectorXd v(chol_dim(q));
  int c = 0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j <= i; ++j, ++c) v[c] = (i == j) ? P(i, i) * L(i, i) : P(i, j);
  return v;
}

// ---------------------------------------------------------------------------
// Finite-order logistic-normal QMLE criterion. theta layout:
//   [mean block | a_1..a_pdisp | packed Cholesky of V]
// ---------------------------------------------------------------------------
struct LNFiniteEvaluator {
  const FiniteDesign& dsg;
  int pdisp;

  int mean_dim() const { return dsg.q * (1 + dsg.p * dsg.q); }
  int dim() const { return mean_dim() + pdisp + chol_dim(dsg.q); }

  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad,
                    Eigen::MatrixXd* scores = nullptr) const {
    const int q = dsg.q, m = dsg.m;
    grad.setZero(dim());
    const Eigen::MatrixXd M = mean_matrix(theta, q, dsg.p);
    const Eigen::MatrixXd L = chol_from_packed(theta.tail(chol_dim(q)), q);
    if (!L.allFinite()) return kInf;
    double logdetV = 0.0;
    for (int i = 0; i < q; ++i) logdetV += 2.0 * std::log(L(i, i));
    // V^{-1} through the factor; V is shared by all t.
    Eigen::MatrixXd Vinv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(q, q));
    Vinv = L.transpose().triangularView<Eigen::Upper>().solve(Vinv);

    const Eigen::MatrixXd U = dsg.X * M.transpose();
    const Eigen::MatrixXd R = dsg.Z - U;
    Eigen::VectorXd s = Eigen::VectorXd::Zero(m);
    const auto W2 = dsg.W.rightCols(dsg.p).leftCols(pdisp);
    if (pdisp > 0) s = W2 * theta.segment(mean_dim(), pdisp);

    KahanSum value;
    Eigen::MatrixXd Gmu(m, q);
    Eigen::VectorXd Gs(m);
    Eigen::MatrixXd GV = Eigen::MatrixXd::Zero(q, q);
    if (scores != nullptr) scores->setZero(m, dim());
    for (int r = 0; r < m; ++r) {
      const double phi = std::exp(s[r]);
      if (!(phi > 0.0) || !std::isfinite(phi)) {
        grad.setZero();
        return kInf;
      }
      const Eigen::VectorXd w = Vinv * R.row(r).transpose();
      const double quad = R.row(r).dot(w);
      value.add(quad / phi + q * s[r] + logdetV);
      Gmu.row(r) = -(2.0 / phi) * w.transpose();
      Gs[r] = q - quad / phi;
      GV.noalias() -= (1.0 / phi) * (w * w.transpose());
      if (scores != nullptr) {
        Eigen::MatrixXd Mg = Gmu.row(r).transpose() * dsg.X.row(r);
        Eigen::VectorXd row(dim());
        mean_grad_to_packed(Mg, q, dsg.p, 1.0, row.head(mean_dim()));
        if (pdisp > 0) row.segment(mean_dim(), pdisp) = Gs[r] * W2.row(r).transpose();
        const Eigen::MatrixXd Gv_r = -(1.0 / phi) * (w * w.transpose()) + Vinv;
        row.tail(chol_dim(q)) = chol_grad_from_matrix(Gv_r, L);
        scores->row(r) = row.transpose();
      }
    }
    if (!std::isfinite(value.sum)) {
      grad.setZero();
      return kInf;
    }
    mean_grad_to_packed(Gmu.transpose() * dsg.X, q, dsg.p, 1.0 / m, grad.head(mean_dim()));
    if (pdisp > 0) grad.segment(mean_dim(), pdisp) = (Gs.transpose() * W2).transpose() / m;
    const Eigen::MatrixXd Gv = GV / m + Vinv;
    grad.tail(chol_dim(q)) = chol_grad_from_matrix(Gv, L);
    return value.sum / m;
  }
};

// ---------------------------------------------------------------------------
// Observation-driven evaluators (forward sensitivity recursions).
// ---------------------------------------------------------------------------
struct OdData {
  int d = 0, q = 0, n = 0;
  Eigen::MatrixXd H1;    // n x q
  Eigen::VectorXd H2;    // n
  Eigen::MatrixXd logY;  // n x d
  Eigen::MatrixXd Z;     // n x q
};

OdData build_od_data(const std::vector<Composition>& data) {
  const int n = static_cast<int>(data.size());
  if (n < 1) fail("estimation: need at least one observation");
  OdData od;
  od.d = data[0].dim();
  od.q = od.d - 1;
  od.n = n;
  od.H1.resize(n, od.q);
  od.H2.resize(n);
  od.logY.resize(n, od.d);
  od.Z.resize(n, od.q);
  for (int t = 0; t < n; ++t) {
    if (data[t].dim() != od.d) fail("estimation: data dimensions differ");
    od.H1.row(t) = h1(data[t]).transpose();
    od.H2[t] = shannon_entropy(data[t]);
    od.logY.row(t) = data[t].values().array().log().matrix().transpose();
    od.Z.row(t) = alr(data[t]).transpose();
  }
  return od;
}

// theta layout for the Dirichlet OD likelihood: [C | vecA | vecB | c a b].
struct DirichletOdEvaluator {
  const OdData& od;

  int mean_dim() const { return od.q + 2 * od.q * od.q; }
  int dim() const { return mean_dim() + 3; }

  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad,
                    Eigen::MatrixXd* scores = nullptr) const {
    const int q = od.q, n = od.n, P1 = mean_dim();
    grad.setZero(dim());
    const Eigen::VectorXd C = theta.head(q);
    Eigen::MatrixXd A(q, q), B(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) {
        A(i, j) = theta[q + i * q + j];
        B(i, j) = theta[q + q * q + i * q + j];
      }
    const double c = theta[P1], a = theta[P1 + 1], b = theta[P1 + 2];

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(q);
    double s = 0.0;
    Eigen::MatrixXd Jmu = Eigen::MatrixXd::Zero(q, P1);
    Eigen::Vector3d Js = Eigen::Vector3d::Zero();

    KahanSum value;
    Eigen::VectorXd gmean = Eigen::VectorXd::Zero(P1);
    Eigen::Vector3d gdisp = Eigen::Vector3d::Zero();
    Eigen::RowVectorXd gmu_row(q);
    if (scores != nullptr) scores->setZero(n, dim());
    for (int t = 0; t < n; ++t) {
      double ell, gs;
      if (!mu.allFinite() || !std::isfinite(s) ||
          !dirichlet_obs(mu.transpose(), s, od.logY.row(t), ell, gmu_row, gs)) {
        grad.setZero();
        return kInf;
      }
      value.add(ell);
      gmean.noalias() += Jmu.transpose() * gmu_row.transpose();
      gdisp += gs * Js;
      if (scores != nullptr) {
        scores->row(t).head(P1) = -(Jmu.transpose() * gmu_row.transpose()).transpose();
        scores->row(t).tail(3) = -(gs * Js).transpose();
      }
      // advance sensitivities, then the state (old mu/s feed the B and b terms)
      Jmu = B * Jmu;
      Jmu.block(0, 0, q, q) += Eigen::MatrixXd::Identity(q, q);
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
          Jmu(i, q + i * q + j) += od.H1(t, j);
          Jmu(i, q + q * q + i * q + j) += mu[j];
        }
      Js = b * Js + Eigen::Vector3d(1.0, od.H2[t], s);
      mu = C + A * od.H1.row(t).transpose() + B * mu;
      s = c + a * od.H2[t] + b * s;
    }
    grad.head(P1) = -gmean / n;
    grad.tail(3) = -gdisp / n;
    return -value.sum / n;
  }
};

// theta layout for the logistic-normal OD criterion:
//   [C | vecA | vecB | a b | packed Cholesky of V].
struct LNOdEvaluator {
  const OdData& od;

  int mean_dim() const { return od.q + 2 * od.q * od.q; }
  int dim() const { return mean_dim() + 2 + chol_dim(od.q); }

  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad,
                    Eigen::MatrixXd* scores = nullptr) const {
    const int q = od.q, n = od.n, P1 = mean_dim();
    grad.setZero(dim());
    const Eigen::VectorXd C = theta.head(q);
    Eigen::MatrixXd A(q, q), B(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) {
        A(i, j) = theta[q + i * q + j];
        B(i, j) = theta[q + q * q + i * q + j];
      }
    const double a = theta[P1], b = theta[P1 + 1];
    const Eigen::MatrixXd L = chol_from_packed(theta.tail(chol_dim(q)), q);
    if (!L.allFinite()) return kInf;
    double logdetV = 0.0;
    for (int i = 0; i < q; ++i) logdetV += 2.0 * std::log(L(i, i));
    Eigen::MatrixXd Vinv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(q, q));
    Vinv = L.transpose().triangularView<Eigen::Upper>().solve(Vinv);

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(q);
    double s = 0.0;
    Eigen::MatrixXd Jmu = Eigen::MatrixXd::Zero(q, P1);
    Eigen::Vector2d Js = Eigen::Vector2d::Zero();

    KahanSum value;
    Eigen::VectorXd gmean = Eigen::VectorXd::Zero(P1);
    Eigen::Vector2d gdisp = Eigen::Vector2d::Zero();
    Eigen::MatrixXd GV = Eigen::MatrixXd::Zero(q, q);
    if (scores != nullptr) scores->setZero(n, dim());
    for (int t = 0; t < n; ++t) {
      if (!mu.allFinite() || !std::isfinite(s)) {
        grad.setZero();
        return kInf;
      }
      const double phi = std::exp(s);
      if (!(phi > 0.0) || !std::isfinite(phi)) {
        grad.setZero();
        return kInf;
      }
      const Eigen::VectorXd r = od.Z.row(t).transpose() - mu;
      const Eigen::VectorXd w = Vinv * r;
      const double quad = r.dot(w);
      value.add(quad / phi + q * s + logdetV);
      const Eigen::VectorXd Gmu = -(2.0 / phi) * w;
      const double Gs = q - quad / phi;
      gmean.noalias() += Jmu.transpose() * Gmu;
      gdisp += Gs * Js;
      GV.noalias() -= (1.0 / phi) * (w * w.transpose());
      if (scores != nullptr) {
        scores->row(t).head(P1) = (Jmu.transpose() * Gmu).transpose();
        scores->row(t).segment(P1, 2) = (Gs * Js).transpose();
        const Eigen::MatrixXd Gv_r = -(1.0 / phi) * (w * w.transpose()) + Vinv;
        scores->row(t).tail(chol_dim(q)) = chol_grad_from_matrix(Gv_r, L).transpose();
      }
      Jmu = B * Jmu;
      Jmu.block(0, 0, q, q) += Eigen::MatrixXd::Identity(q, q);
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
          Jmu(i, q + i * q + j) += od.H1(t, j);
          Jmu(i, q + q * q + i * q + j) += mu[j];
        }
      Js = b * Js + Eigen::Vector2d(od.H2[t], s);
      mu = C + A * od.H1.row(t).transpose() + B * mu;
      s = a * od.H2[t] + b * s;
    }
    if (!std::isfinite(value.sum)) {
      grad.setZero();
      return kInf;
    }
    grad.head(P1) = gmean / n;
    grad.segment(P1, 2) = gdisp / n;
    const Eigen::MatrixXd Gv = GV / n + Vinv;
    grad.tail(chol_dim(q)) = chol_grad_from_matrix(Gv, L);
    return value.sum / n;
  }
};

// Mean-block least squares for the OD recursion (step one of the OD QMLE):
// (1/n) sum |z_t - mu_t|^2 over [C | vecA | vecB].
struct LNOdMeanEvaluator {
  const OdData& od;

  int dim() const { return od.q + 2 * od.q * od.q; }

  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
    const int q = od.q, n = od.n, P1 = dim();
    grad.setZero(P1);
    const Eigen::VectorXd C = theta.head(q);
    Eigen::MatrixXd A(q, q), B(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) {
        A(i, j) = theta[q + i * q + j];
        B(i, j) = theta[q + q * q + i * q + j];
      }
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd Jmu = Eigen::MatrixXd::Zero(q, P1);
    KahanSum value;
    for (int t = 0; t < n; ++t) {
      if (!mu.allFinite()) {
        grad.setZero();
        return kInf;
      }
      const Eigen::VectorXd r = od.Z.row(t).transpose() - mu;
      value.add(r.squaredNorm());
      grad.noalias() += Jmu.transpose() * (-2.0 * r);
      Jmu = B * Jmu;
      Jmu.block(0, 0, q, q) += Eigen::MatrixXd::Identity(q, q);
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
          Jmu(i, q + i * q + j) += od.H1(t, j);
          Jmu(i, q + q * q + i * q + j) += mu[j];
        }
      mu = C + A * od.H1.row(t).transpose() + B * mu;
    }
    if (!std::isfinite(value.sum)) {
      grad.setZero();
      return kInf;
    }
    grad /= n;
    return value.sum / n;
  }
};

// Extracts (C, A, B) packed head from an OD theta.
void unpack_od_mean(const Eigen::VectorXd& theta, int q, Eigen::VectorXd& C, Eigen::MatrixXd& A,
                    Eigen::MatrixXd& B) {
  C = theta.head(q);
  A.resize(q, q);
  B.resize(q, q);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) {
      A(i, j) = theta[q + i * q + j];
      B(i, j) = theta[q + q * q + i * q + j];
    }
}

// Stationarity handling for OD optimizers: b passes through tanh and rho(B)
// carries a quadratic penalty beyond 0.999. The penalty gradient is taken by
// central differences on the B entries only when the penalty is active.
constexpr double kRhoEdge = 0.999;
constexpr double kRhoPenalty = 1e6;

double rho_penalty(const Eigen::MatrixXd& B) {
  const double excess = spectral_radius(B) - kRhoEdge;
  return excess > 0.0 ? kRhoPenalty * excess * excess : 0.0;
}

void add_rho_penalty(const Eigen::VectorXd& theta, int q, double& value, Eigen::VectorXd& grad) {
  Eigen::MatrixXd B(q, q);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) B(i, j) = theta[q + q * q + i * q + j];
  const double pen = rho_penalty(B);
  if (pen == 0.0) return;
  value += pen;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(B(i, j)));
      Eigen::MatrixXd Bp = B, Bm = B;
      Bp(i, j) += h;
      Bm(i, j) -= h;
      grad[q + q * q + i * q + j] += (rho_penalty(Bp) - rho_penalty(Bm)) / (2.0 * h);
    }
}

std::vector<std::string> mean_names(int q, int pmean, const std::string& a0name,
                                    const std::string& akprefix) {
  std::vector<std::string> names;
  for (int i = 0; i < q; ++i) names.push_back(a0name + "[" + idx1(i) + "]");
  for (int k = 0; k < pmean; ++k)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j)
        names.push_back(akprefix + std::to_string(k + 1) + "[" + idx1(i) + "," + idx1(j) + "]");
  return names;
}

std::vector<std::string> od_mean_names(int q) {
  std::vector<std::string> names;
  for (int i = 0; i < q; ++i) names.push_back("C[" + idx1(i) + "]");
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) names.push_back("A[" + idx1(i) + "," + idx1(j) + "]");
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) names.push_back("B[" + idx1(i) + "," + idx1(j) + "]");
  return names;
}

std::vector<std::string> chol_names(int q) {
  std::vector<std::string> names;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j <= i; ++j)
      names.push_back((i == j ? std::string("logL[") : std::string("L[")) + idx1(i) + "," +
                      idx1(j) + "]");
  return names;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public packing
// ---------------------------------------------------------------------------

std::string method_name(FitMethod method) {
  switch (method) {
    case FitMethod::ConvexContrast: return "convex_contrast";
    case FitMethod::DirichletMLE: return "dirichlet_mle";
    case FitMethod::LNLeastSquares: return "ln_least_squares";
    case FitMethod::LNQMLE: return "ln_qmle";
  }
  return "?";
}

Eigen::VectorXd pack(const DirichletFiniteSpec& spec) {
  spec.validate();
  const int q = spec.d - 1;
  Eigen::VectorXd theta(q + spec.p * q * q + 1 + spec.p);
  theta.head(q) = spec.A0;
  for (int k = 0; k < spec.p; ++k)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) theta[q + k * q * q + i * q + j] = spec.A[k](i, j);
  theta[q + spec.p * q * q] = spec.a0;
  for (int k = 0; k < spec.p; ++k) theta[q + spec.p * q * q + 1 + k] = spec.a[k];
  return theta;
}

DirichletFiniteSpec unpack_dirichlet_finite(int d, int p, const Eigen::VectorXd& theta) {
  const int q = d - 1;
  if (theta.size() != q + p * q * q + 1 + p) fail("unpack: theta has wrong size");
  DirichletFiniteSpec spec;
  spec.d = d;
  spec.p = p;
  spec.A0 = theta.head(q);
  spec.A.resize(p);
  for (int k = 0; k < p; ++k) {
    spec.A[k].resize(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) spec.A[k](i, j) = theta[q + k * q * q + i * q + j];
  }
  spec.a0 = theta[q + p * q * q];
  spec.a.resize(p);
  for (int k = 0; k < p; ++k) spec.a[k] = theta[q + p * q * q + 1 + k];
  return spec;
}

Eigen::VectorXd pack(const DirichletODSpec& spec) {
  spec.validate();
  const int q = spec.d - 1;
  Eigen::VectorXd theta(q + 2 * q * q + 3);
  theta.head(q) = spec.C;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) {
      theta[q + i * q + j] = spec.A(i, j);
      theta[q + q * q + i * q + j] = spec.B(i, j);
    }
  theta[q + 2 * q * q] = spec.c;
  theta[q + 2 * q * q + 1] = spec.a;
  theta[q + 2 * q * q + 2] = spec.b;
  return theta;
}

DirichletODSpec unpack_dirichlet_od(int d, const Eigen::VectorXd& theta) {
  const int q = d - 1;
  if (theta.size() != q + 2 * q * q + 3) fail("unpack: theta has wrong size");
  DirichletODSpec spec;
  spec.d = d;
  unpack_od_mean(theta, q, spec.C, spec.A, spec.B);
  spec.c = theta[q + 2 * q * q];
  spec.a = theta[q + 2 * q * q + 1];
  spec.b = theta[q + 2 * q * q + 2];
  return spec;
}

Eigen::VectorXd pack(const LogisticNormalFiniteSpec& spec) {
  spec.validate();
  const int q = spec.d - 1;
  Eigen::VectorXd theta(q + spec.p * q * q + spec.p + chol_dim(q));
  theta.head(q) = spec.A0;
  for (int k = 0; k < spec.p; ++k)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) theta[q + k * q * q + i * q + j] = spec.A[k](i, j);
  for (int k = 0; k < spec.p; ++k) theta[q + spec.p * q * q + k] = spec.a[k];
  theta.tail(chol_dim(q)) = chol_to_packed(spec.chol_V);
  return theta;
}

LogisticNormalFiniteSpec unpack_ln_finite(int d, int p, const Eigen::VectorXd& theta) {
  const int q = d - 1;
  if (theta.size() != q + p * q * q + p + chol_dim(q)) fail("unpack: theta has wrong size");
  LogisticNormalFiniteSpec spec;
  spec.d = d;
  spec.p = p;
  spec.A0 = theta.head(q);
  spec.A.resize(p);
  for (int k = 0; k < p; ++k) {
    spec.A[k].resize(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) spec.A[k](i, j) = theta[q + k * q * q + i * q + j];
  }
  spec.a.resize(p);
  for (int k = 0; k < p; ++k) spec.a[k] = theta[q + p * q * q + k];
  spec.chol_V = chol_from_packed(theta.tail(chol_dim(q)), q);
  return spec;
}

Eigen::VectorXd pack(const LogisticNormalODSpec& spec) {
  spec.validate();
  const int q = spec.d - 1;
  Eigen::VectorXd theta(q + 2 * q * q + 2 + chol_dim(q));
  theta.head(q) = spec.C;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) {
      theta[q + i * q + j] = spec.A(i, j);
      theta[q + q * q + i * q + j] = spec.B(i, j);
    }
  theta[q + 2 * q * q] = spec.a;
  theta[q + 2 * q * q + 1] = spec.b;
  theta.tail(chol_dim(q)) = chol_to_packed(spec.chol_V);
  return theta;
}

LogisticNormalODSpec unpack_ln_od(int d, const Eigen::VectorXd& theta) {
  const int q = d - 1;
  if (theta.size() != q + 2 * q * q + 2 + chol_dim(q)) fail("unpack: theta has wrong size");
  LogisticNormalODSpec spec;
  spec.d = d;
  unpack_od_mean(theta, q, spec.C, spec.A, spec.B);
  spec.a = theta[q + 2 * q * q];
  spec.b = theta[q + 2 * q * q + 1];
  spec.chol_V = chol_from_packed(theta.tail(chol_dim(q)), q);
  return spec;
}

Eigen::VectorXd pack_spec(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return pack(s); }, spec);
}

Eigen::VectorXd pack_mean(const MeanParams& params) {
  const int q = params.d - 1;
  Eigen::VectorXd theta(q + params.p * q * q);
  theta.head(q) = params.A0;
  for (int k = 0; k < params.p; ++k)
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) theta[q + k * q * q + i * q + j] = params.A[k](i, j);
  return theta;
}

MeanParams unpack_mean(int d, int p, const Eigen::VectorXd& theta1) {
  const int q = d - 1;
  if (theta1.size() != q + p * q * q) fail("unpack_mean: theta1 has wrong size");
  MeanParams params;
  params.d = d;
  params.p = p;
  params.A0 = theta1.head(q);
  params.A.resize(p);
  for (int k = 0; k < p; ++k) {
    params.A[k].resize(q, q);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) params.A[k](i, j) = theta1[q + k * q * q + i * q + j];
  }
  return params;
}

std::vector<std::string> spec_param_names(const ModelSpec& spec) {
  const int q = spec_dim(spec) - 1;
  std::vector<std::string> names;
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec)) {
    names = mean_names(q, s->p, "A0", "A");
    names.push_back("a0");
    for (int k = 1; k <= s->p; ++k) names.push_back("a" + std::to_string(k));
  } else if (std::get_if<DirichletODSpec>(&spec) != nullptr) {
    names = od_mean_names(q);
    names.push_back("c");
    names.push_back("a");
    names.push_back("b");
  } else if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec)) {
    names = mean_names(q, s->p, "A0", "A");
    for (int k = 1; k <= s->p; ++k) names.push_back("a" + std::to_string(k));
    for (const auto& nm : chol_names(q)) names.push_back(nm);
  } else {
    names = od_mean_names(q);
    names.push_back("a");
    names.push_back("b");
    for (const auto& nm : chol_names(q)) names.push_back(nm);
  }
  return names;
}

// ---------------------------------------------------------------------------
// Objective surfaces
// ---------------------------------------------------------------------------

ContrastEval convex_contrast(const MeanParams& theta1, const std::vector<Composition>& data) {
  const FiniteDesign dsg = build_design(data, theta1.p);
  if (theta1.d != dsg.d) fail("convex_contrast: dimension mismatch");
  ContrastEvaluator evaluator{dsg};
  ContrastEval out;
  out.value = evaluator(pack_mean(theta1), out.gradient);
  return out;
}

ObjectiveEval dirichlet_finite_negloglik(const DirichletFiniteSpec& spec,
                                         const std::vector<Composition>& data,
                                         std::optional<double> fixed_phi) {
  spec.validate();
  const FiniteDesign dsg = build_design(data, spec.p);
  if (spec.d != dsg.d) fail("negloglik: dimension mismatch");
  ObjectiveEval out;
  if (fixed_phi) {
    if (!(*fixed_phi > 0.0)) fail("negloglik: fixed_phi must be positive");
    DirichletFiniteEvaluator evaluator{dsg, spec.p, false, 0, std::log(*fixed_phi)};
    MeanParams mean{spec.d, spec.p, spec.A0, spec.A};
    out.value = evaluator(pack_mean(mean), out.gradient);
  } else {
    DirichletFiniteEvaluator evaluator{dsg, spec.p, true, spec.p, std::nullopt};
    out.value = evaluator(pack(spec), out.gradient);
  }
  return out;
}

ObjectiveEval dirichlet_od_negloglik(const DirichletODSpec& spec,
                                     const std::vector<Composition>& data) {
  spec.validate();
  const OdData od = build_od_data(data);
  if (spec.d != od.d) fail("negloglik: dimension mismatch");
  DirichletOdEvaluator evaluator{od};
  ObjectiveEval out;
  out.value = evaluator(pack(spec), out.gradient);
  return out;
}

ObjectiveEval ln_finite_qmle_objective(const LogisticNormalFiniteSpec& spec,
                                       const std::vector<Composition>& data) {
  spec.validate();
  const FiniteDesign dsg = build_design(data, spec.p);
  if (spec.d != dsg.d) fail("qmle: dimension mismatch");
  LNFiniteEvaluator evaluator{dsg, spec.p};
  ObjectiveEval out;
  out.value = evaluator(pack(spec), out.gradient);
  return out;
}

ObjectiveEval ln_od_qmle_objective(const LogisticNormalODSpec& spec,
                                   const std::vector<Composition>& data) {
  spec.validate();
  const OdData od = build_od_data(data);
  if (spec.d != od.d) fail("qmle: dimension mismatch");
  LNOdEvaluator evaluator{od};
  ObjectiveEval out;
  out.value = evaluator(pack(spec), out.gradient);
  return out;
}

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

void check_data_quality(const std::vector<Composition>& data) {
  if (data.empty()) fail("estimation: no data");
  for (std::size_t t = 0; t < data.size(); ++t)
    for (int i = 0; i < data[t].dim(); ++i)
      if (data[t][i] < 1e-12) {
        std::ostringstream os;
        os << "data quality: composition " << t << " coordinate " << i << " is " << data[t][i]
           << " (< 1e-12); repair zeros at ingestion";
        throw std::runtime_error(os.str());
      }
}

std::optional<std::string> identification_warning(const Eigen::MatrixXd& A) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const double smax = svd.singularValues().maxCoeff();
  const double smin = svd.singularValues().minCoeff();
  if (smax > 0.0 && smin < 1e-6 * smax) {
    std::ostringstream os;
    os << "A is numerically rank deficient (sigma_min/sigma_max = " << smin / smax
       << "); the identification condition B^k A = B~^k A may fail to pin B";
    return os.str();
  }
  return std::nullopt;
}

FitResult fit_convex(const std::vector<Composition>& data, int p,
                     const std::optional<Eigen::VectorXd>& init) {

  const int d = data[0].dim();
  const int q = d - 1;
  const int n = static_cast<int>(data.size());
  if (n <= p * q * q + d) fail("fit_convex: not enough observations for the requested order");
  const FiniteDesign dsg = build_design(data, p);
  ContrastEvaluator evaluator{dsg};
  Eigen::VectorXd x0 = init ? *init : Eigen::VectorXd::Zero(evaluator.dim());
  if (x0.size() != evaluator.dim()) fail("fit_convex: init has wrong size");
  const BfgsResult opt = minimize_bfgs(
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return evaluator(x, g); }, x0);

  const MeanParams mean = unpack_mean(d, p, opt.x);
  DirichletFiniteSpec spec;
  spec.d = d;
  spec.p = p;
  spec.A0 = mean.A0;
  spec.A = mean.A;
  spec.a0 = 0.0;
  spec.a.assign(p, 0.0);

  FitResult result;
  result.spec = spec;
  result.method = FitMethod::ConvexContrast;
  result.objective = opt.value;
  result.converged = opt.converged;
  result.iterations = opt.iterations;
  result.gradient_norm = opt.gradient.norm();
  result.mean_only = true;
  result.params = opt.x;
  result.param_names = mean_names(q, p, "A0", "A");
  if (opt.line_search_failed && !opt.converged)
    result.warnings.push_back("line search failed before reaching the gradient tolerance");
  return result;
}

FitResult fit_dirichlet_mle(const std::vector<Composition>& data, int p,
                            const DirichletFitOptions& options) {

  const int d = data[0].dim();
  const int q = d - 1;
  const FiniteDesign dsg = build_design(data, p);
  const int pmean = options.zero_A ? 0 : p;
  const bool use_a0 = !options.fixed_phi.has_value();
  const int pdisp = (options.fixed_phi || options.zero_a) ? 0 : p;
  DirichletFiniteEvaluator evaluator{
      dsg, pmean, use_a0, pdisp,
      options.fixed_phi ? std::optional<double>(std::log(*options.fixed_phi)) : std::nullopt};

  Eigen::VectorXd x0(evaluator.dim());
  if (options.init) {
    if (options.init->size() != evaluator.dim()) fail("fit_dirichlet_mle: init has wrong size");
    x0 = *options.init;
  } else {
    if (options.zero_A) {
      Eigen::VectorXd mean_comp = Eigen::VectorXd::Zero(d);
      for (const auto& y : data) mean_comp += y.values();
      x0.head(q) = alr(Composition(mean_comp / data.size()));
    } else {
      x0.head(evaluator.mean_dim()) = fit_convex(data, p).params;
    }
    if (use_a0) {
      // dispersion warm start: profile the likelihood over a0 on a grid,
      // entropy coefficients at zero
      double best_a0 = 0.0, best_value = kInf;
      Eigen::VectorXd probe = x0;
      probe.tail(evaluator.disp_dim()).setZero();
      Eigen::VectorXd dummy;
      for (int g = 0; g <= 30; ++g) {
        const double a0 = -2.0 + 6.0 * g / 30.0;
        probe[evaluator.mean_dim()] = a0;
        const double value = evaluator(probe, dummy);
        if (value < best_value) {
          best_value = value;
          best_a0 = a0;
        }
      }
      x0.tail(evaluator.disp_dim()).setZero();
      x0[evaluator.mean_dim()] = best_a0;
    }
  }

  const BfgsResult opt = minimize_bfgs(
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return evaluator(x, g); }, x0);

  DirichletFiniteSpec spec;
  spec.d = d;
  spec.p = p;
  spec.A0 = opt.x.head(q);
  spec.A.assign(p, Eigen::MatrixXd::Zero(q, q));
  if (pmean > 0) {
    const MeanParams mean = unpack_mean(d, p, opt.x.head(evaluator.mean_dim()));
    spec.A = mean.A;
  }
  spec.a.assign(p, 0.0);
  if (options.fixed_phi) {
    spec.a0 = std::log(*options.fixed_phi);
  } else {
    spec.a0 = opt.x[evaluator.mean_dim()];
    for (int k = 0; k < pdisp; ++k) spec.a[k] = opt.x[evaluator.mean_dim() + 1 + k];
  }

  FitResult result;
  result.spec = spec;
  result.method = FitMethod::DirichletMLE;
  result.objective = opt.value;
  result.converged = opt.converged;
  result.iterations = opt.iterations;
  result.gradient_norm = opt.gradient.norm();
  result.mean_only = options.fixed_phi.has_value();
  result.params = opt.x;
  result.param_names = mean_names(q, pmean, "A0", "A");
  if (use_a0) {
    result.param_names.push_back("a0");
    for (int k = 1; k <= pdisp; ++k) result.param_names.push_back("a" + std::to_string(k));
  }
  if (opt.line_search_failed && !opt.converged)
    result.warnings.push_back("line search failed before reaching the gradient tolerance");
  return result;
}

FitResult fit_dirichlet_mle_od(const std::vector<Composition>& data,
                               const DirichletFitOptions& options) {

  if (options.fixed_phi || options.zero_A || options.zero_a)
    fail("fit_dirichlet_mle_od: constraint options are only supported for the finite-order fit");
  const int d = data[0].dim();
  const int q = d - 1;
  const OdData od = build_od_data(data);
  DirichletOdEvaluator evaluator{od};
  const int P1 = evaluator.mean_dim();

  Eigen::VectorXd x0(evaluator.dim());
  if (options.init) {
    if (options.init->size() != evaluator.dim()) fail("fit_dirichlet_mle_od: init has wrong size");
    x0 = *options.init;
  } else {
    x0.setZero();
    const FitResult warm = fit_convex(data, 1);
    x0.head(q + q * q) = warm.params;  // C = A0, A = A1, B = 0
    Eigen::VectorXd dummy;
    double best_c = 0.0, best_value = kInf;
    for (int g = 0; g <= 30; ++g) {
      const double c = -2.0 + 6.0 * g / 30.0;
      Eigen::VectorXd probe = x0;
      probe[P1] = c;
      const double value = evaluator(probe, dummy);
      if (value < best_value) {
        best_value = value;
        best_c = c;
      }
    }
    x0[P1] = best_c;
  }

  // optimize with b = tanh(beta) and the rho(B) penalty
  Eigen::VectorXd z0 = x0;
  z0[P1 + 2] = std::atanh(std::clamp(x0[P1 + 2], -0.999999, 0.999999));
  const auto wrapped = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
    Eigen::VectorXd theta = z;
    const double b = std::tanh(z[P1 + 2]);
    theta[P1 + 2] = b;
    double value = evaluator(theta, g);
    if (std::isfinite(value)) add_rho_penalty(theta, q, value, g);
    g[P1 + 2] *= (1.0 - b * b);
    return value;
  };
  const BfgsResult opt = minimize_bfgs(wrapped, z0);

  Eigen::VectorXd theta_hat = opt.x;
  theta_hat[P1 + 2] = std::tanh(opt.x[P1 + 2]);
  DirichletODSpec spec = unpack_dirichlet_od(d, theta_hat);

  FitResult result;
  result.spec = spec;
  result.method = FitMethod::DirichletMLE;
  result.objective = opt.value;
  result.converged = opt.converged;
  result.iterations = opt.iterations;
  result.gradient_norm = opt.gradient.norm();
  result.params = theta_hat;
  result.param_names = spec_param_names(result.spec);
  if (const auto warning = identification_warning(spec.A)) result.warnings.push_back(*warning);
  if (opt.line_search_failed && !opt.converged)
    result.warnings.push_back("line search failed before reaching the gradient tolerance");
  return result;
}

FitResult fit_ln_ls(const std::vector<Composition>& data, int p) {

  const int n = static_cast<int>(data.size());
  if (n <= p + 1) fail("fit_ln_ls: need more than p+1 observations");
  const FiniteDesign dsg = build_design(data, p);
  const int q = dsg.q;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dsg.X);
  if (qr.rank() < dsg.X.cols()) {
    std::ostringstream os;
    os << "fit_ln_ls: design matrix is rank deficient (rank " << qr.rank() << " of "
       << dsg.X.cols() << ")";
    throw std::runtime_error(os.str());
  }
  const Eigen::MatrixXd coef = qr.solve(dsg.Z);  // (1+p*q) x q
  const Eigen::MatrixXd R = dsg.Z - dsg.X * coef;
  Eigen::MatrixXd Vhat = R.transpose() * R / dsg.m;
  Vhat += 1e-12 * Eigen::MatrixXd::Identity(q, q);  // keep the factor usable on exact fits

  LogisticNormalFiniteSpec spec;
  spec.d = dsg.d;
  spec.p = p;
  spec.A0 = coef.row(0).transpose();
  spec.A.resize(p);
  for (int k = 0; k < p; ++k) spec.A[k] = coef.middleRows(1 + k * q, q).transpose();
  spec.a.assign(p, 0.0);
  spec.chol_V = Eigen::LLT<Eigen::MatrixXd>(Vhat).matrixL();

  MeanParams mean{dsg.d, p, spec.A0, spec.A};
  FitResult result;
  result.spec = spec;
  result.method = FitMethod::LNLeastSquares;
  result.objective = R.squaredNorm() / dsg.m;
  result.converged = true;
  result.iterations = 0;
  result.gradient_norm = (2.0 / dsg.m) * (dsg.X.transpose() * R).norm();
  result.mean_only = true;
  result.params = pack_mean(mean);
  result.param_names = mean_names(q, p, "A0", "A");
  return result;
}

FitResult fit_ln_qmle(const std::vector<Composition>& data, int p, const LNQmleOptions& options) {

  const FiniteDesign dsg = build_design(data, p);
  const int q = dsg.q;
  const int pdisp = options.estimate_entropy_coeffs ? p : 0;
  LNFiniteEvaluator evaluator{dsg, pdisp};
  const int mean_dim = evaluator.mean_dim();
  const int theta2_dim = pdisp + chol_dim(q);

  const FitResult ls = fit_ln_ls(data, p);
  const auto& ls_spec = std::get<LogisticNormalFiniteSpec>(ls.spec);

  Eigen::VectorXd x(evaluator.dim());
  x.head(mean_dim) = ls.params;
  x.segment(mean_dim, pdisp).setZero();
  x.tail(chol_dim(q)) = chol_to_packed(ls_spec.chol_V);

  // step two: dispersion block with the mean fixed at the LS estimate
  const auto step2 = [&](const Eigen::VectorXd& t2, Eigen::VectorXd& g2) {
    Eigen::VectorXd theta = x;
    theta.tail(theta2_dim) = t2;
    Eigen::VectorXd g;
    const double value = evaluator(theta, g);
    g2 = g.tail(theta2_dim);
    return value;
  };
  const BfgsResult opt2 = minimize_bfgs(step2, x.tail(theta2_dim));
  x.tail(theta2_dim) = opt2.x;

  bool converged = opt2.converged;
  int iterations = opt2.iterations;
  double objective = opt2.value;
  double gradient_norm = opt2.gradient.norm();

  if (options.joint_refine) {
    const BfgsResult opt3 = minimize_bfgs(
        [&](const Eigen::VectorXd& t, Eigen::VectorXd& g) { return evaluator(t, g); }, x);
    x = opt3.x;
    converged = opt3.converged;
    iterations += opt3.iterations;
    objective = opt3.value;
    gradient_norm = opt3.gradient.norm();
  }

  LogisticNormalFiniteSpec spec;
  spec.d = dsg.d;
  spec.p = p;
  const MeanParams mean = unpack_mean(dsg.d, p, x.head(mean_dim));
  spec.A0 = mean.A0;
  spec.A = mean.A;
  spec.a.assign(p, 0.0);
  for (int k = 0; k < pdisp; ++k) spec.a[k] = x[mean_dim + k];
  spec.chol_V = chol_from_packed(x.tail(chol_dim(q)), q);

  FitResult result;
  result.spec = spec;
  result.method = FitMethod::LNQMLE;
  result.objective = objective;
  result.converged = converged;
  result.iterations = iterations;
  result.gradient_norm = gradient_norm;
  result.params = x;
  result.param_names = mean_names(q, p, "A0", "A");
  for (int k = 1; k <= pdisp; ++k) result.param_names.push_back("a" + std::to_string(k));
  for (const auto& nm : chol_names(q)) result.param_names.push_back(nm);
  return result;
}

FitResult fit_ln_qmle_od(const std::vector<Composition>& data, const LNQmleOptions& options) {

  const int d = data[0].dim();
  const int q = d - 1;
  const OdData od = build_od_data(data);
  LNOdEvaluator evaluator{od};
  LNOdMeanEvaluator mean_evaluator{od};
  const int P1 = evaluator.mean_dim();

  // step one: mean recursion by least squares on alr(Y)
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(P1);
  if (static_cast<int>(data.size()) > q * q + d) {
    const FitResult ls = fit_ln_ls(data, 1);
    m0.head(q + q * q) = ls.params;  // C = A0, A = A1, B = 0
  }
  const auto mean_obj = [&](const Eigen::VectorXd& t, Eigen::VectorXd& g) {
    double value = mean_evaluator(t, g);
    if (std::isfinite(value)) add_rho_penalty(t, q, value, g);
    return value;
  };
  const BfgsResult opt1 = minimize_bfgs(mean_obj, m0);

  // residuals of the fitted mean path seed V
  Eigen::VectorXd C;
  Eigen::MatrixXd A, B;
  unpack_od_mean(opt1.x, q, C, A, B);
  Eigen::MatrixXd R(od.n, q);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(q);
  for (int t = 0; t < od.n; ++t) {
    R.row(t) = od.Z.row(t) - mu.transpose();
    mu = C + A * od.H1.row(t).transpose() + B * mu;
  }
  Eigen::MatrixXd V0 = R.transpose() * R / od.n;
  V0 += 1e-12 * Eigen::MatrixXd::Identity(q, q);

  Eigen::VectorXd x(evaluator.dim());
  x.head(P1) = opt1.x;
  x[P1] = 0.0;  // a
  x[P1 + 1] = 0.0;  // b
  x.tail(chol_dim(q)) = chol_to_packed(Eigen::LLT<Eigen::MatrixXd>(V0).matrixL());

  // step two: (a, b, V) with the mean fixed; b through tanh
  const int theta2_dim = 2 + chol_dim(q);
  const auto step2 = [&](const Eigen::VectorXd& z2, Eigen::VectorXd& g2) {
    Eigen::VectorXd theta = x;
    theta.tail(theta2_dim) = z2;
    const double b = std::tanh(z2[1]);
    theta[P1 + 1] = b;
    Eigen::VectorXd g;
    const double value = evaluator(theta, g);
    g2 = g.tail(theta2_dim);
    g2[1] *= (1.0 - b * b);
    return value;
  };
  Eigen::VectorXd z2 = x.tail(theta2_dim);
  const BfgsResult opt2 = minimize_bfgs(step2, z2);
  x.tail(theta2_dim) = opt2.x;
  x[P1 + 1] = std::tanh(opt2.x[1]);

  bool converged = opt1.converged && opt2.converged;
  int iterations = opt1.iterations + opt2.iterations;
  double objective = opt2.value;
  double gradient_norm = opt2.gradient.norm();

  if (options.joint_refine) {
    Eigen::VectorXd z = x;
    z[P1 + 1] = std::atanh(std::clamp(x[P1 + 1], -0.999999, 0.999999));
    const auto joint = [&](const Eigen::VectorXd& zz, Eigen::VectorXd& g) {
      Eigen::VectorXd theta = zz;
      const double b = std::tanh(zz[P1 + 1]);
      theta[P1 + 1] = b;
      double value = evaluator(theta, g);
      if (std::isfinite(value)) add_rho_penalty(theta, q, value, g);
      g[P1 + 1] *= (1.0 - b * b);
      return value;
    };
    const BfgsResult opt3 = minimize_bfgs(joint, z);
    x = opt3.x;
    x[P1 + 1] = std::tanh(opt3.x[P1 + 1]);
    converged = opt3.converged;
    iterations += opt3.iterations;
    objective = opt3.value;
    gradient_norm = opt3.gradient.norm();
  }

  LogisticNormalODSpec spec = unpack_ln_od(d, x);

  FitResult result;
  result.spec = spec;
  result.method = FitMethod::LNQMLE;
  result.objective = objective;
  result.converged = converged;
  result.iterations = iterations;
  result.gradient_norm = gradient_norm;
  result.params = x;
  result.param_names = spec_param_names(result.spec);
  if (const auto warning = identification_warning(spec.A)) result.warnings.push_back(*warning);
  return result;
}

// ---------------------------------------------------------------------------
// Bootstrap and sandwich
// ---------------------------------------------------------------------------

Eigen::VectorXd bootstrap_se(const ModelSpec& spec_hat, int n, int reps, std::uint64_t seed,
                             const Refitter& refit, int threads) {
  if (reps < 2) fail("bootstrap_se: needs at least 2 replicates");
  if (n < 2) fail("bootstrap_se: series length too short");
  if (!check_stationarity(spec_hat).satisfied)
    throw std::domain_error("bootstrap_se: fitted spec violates the stationarity condition");

  std::vector<std::optional<Eigen::VectorXd>> estimates(reps);
  parallel_for(reps, threads, [&](int r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    const std::vector<Composition> series = simulate(spec_hat, n, 1000, rng);
    try {
      const FitResult fit = refit(series);
      if (fit.converged) estimates[r] = fit.params;
    } catch (const std::exception& e) {
      log_debug(std::string("bootstrap replicate failed: ") + e.what());
    }
  });

  int ok = 0;
  for (const auto& est : estimates)
    if (est) ++ok;
  const int failures = reps - ok;
  if (failures * 5 > reps) {
    std::ostringstream os;
    os << "bootstrap_se: " << failures << " of " << reps << " replicates failed to converge";
    throw std::runtime_error(os.str());
  }
  if (ok < 2) throw std::runtime_error("bootstrap_se: fewer than 2 converged replicates");

  Eigen::Index k = -1;
  for (const auto& est : estimates)
    if (est) {
      k = est->size();
      break;
    }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  for (const auto& est : estimates)
    if (est) {
      if (est->size() != k) throw std::runtime_error("bootstrap_se: inconsistent estimate sizes");
      mean += *est;
    }
  mean /= ok;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(k);
  for (const auto& est : estimates)
    if (est) ss += (*est - mean).cwiseAbs2();
  return (ss / (ok - 1)).cwiseSqrt();
}

Eigen::VectorXd bootstrap_se(const ModelSpec& spec_hat, int n, int reps, std::uint64_t seed,
                             FitMethod method, int threads) {
  Refitter refit;
  switch (method) {
    case FitMethod::ConvexContrast: {
      const auto* s = std::get_if<DirichletFiniteSpec>(&spec_hat);
      if (s == nullptr) fail("bootstrap_se: convex contrast needs a finite-order Dirichlet spec");
      const int p = s->p;
      refit = [p](const std::vector<Composition>& data) { return fit_convex(data, p); };
      break;
    }
    case FitMethod::DirichletMLE: {
      if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec_hat)) {
        const int p = s->p;
        refit = [p](const std::vector<Composition>& data) { return fit_dirichlet_mle(data, p); };
      } else if (std::get_if<DirichletODSpec>(&spec_hat) != nullptr) {
        refit = [](const std::vector<Composition>& data) { return fit_dirichlet_mle_od(data); };
      } else {
        fail("bootstrap_se: Dirichlet MLE needs a Dirichlet spec");
      }
      break;
    }
    case FitMethod::LNLeastSquares: {
      const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec_hat);
      if (s == nullptr) fail("bootstrap_se: least squares needs a finite-order logistic-normal spec");
      const int p = s->p;
      refit = [p](const std::vector<Composition>& data) { return fit_ln_ls(data, p); };
      break;
    }
    case FitMethod::LNQMLE: {
      if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec_hat)) {
        const int p = s->p;
        refit = [p](const std::vector<Composition>& data) { return fit_ln_qmle(data, p); };
      } else if (std::get_if<LogisticNormalODSpec>(&spec_hat) != nullptr) {
        refit = [](const std::vector<Composition>& data) { return fit_ln_qmle_od(data); };
      } else {
        fail("bootstrap_se: QMLE needs a logistic-normal spec");
      }
      break;
    }
  }
  return bootstrap_se(spec_hat, n, reps, seed, refit, threads);
}

Eigen::MatrixXd sandwich_variance(const ModelSpec& spec_hat, const std::vector<Composition>& data,
                                  const DirichletFitOptions& options) {

  if (!spec_is_dirichlet(spec_hat))
    fail("sandwich_variance: implemented for fitted Dirichlet models");

  Eigen::VectorXd theta;
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd*)> eval;
  // Keep the builders alive for the whole function.
  std::optional<FiniteDesign> dsg;
  std::optional<OdData> od;
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec_hat)) {
    s->validate();
    dsg = build_design(data, s->p);
    const int q = s->d - 1;
    const int pmean = options.zero_A ? 0 : s->p;
    const bool use_a0 = !options.fixed_phi.has_value();
    const int pdisp = (options.fixed_phi || options.zero_a) ? 0 : s->p;
    const std::optional<double> fixed_logphi =
        options.fixed_phi ? std::optional<double>(std::log(*options.fixed_phi)) : std::nullopt;
    // packed estimate on the constrained surface
    theta.resize(q * (1 + pmean * q) + (use_a0 ? 1 : 0) + pdisp);
    theta.head(q) = s->A0;
    if (pmean > 0) {
      MeanParams mean{s->d, s->p, s->A0, s->A};
      theta.head(q * (1 + pmean * q)) = pack_mean(mean);
    }
    if (use_a0) {
      theta[q * (1 + pmean * q)] = s->a0;
      for (int k = 0; k < pdisp; ++k) theta[q * (1 + pmean * q) + 1 + k] = s->a[k];
    }
    eval = [&dsg, pmean, use_a0, pdisp, fixed_logphi](const Eigen::VectorXd& x, Eigen::VectorXd& g,
                                                      Eigen::MatrixXd* scores) {
      DirichletFiniteEvaluator evaluator{*dsg, pmean, use_a0, pdisp, fixed_logphi};
      return evaluator(x, g, scores);
    };
  } else {
    if (options.fixed_phi || options.zero_A || options.zero_a)
      fail("sandwich_variance: constraint options apply to finite-order specs only");
    const auto& od_spec = std::get<DirichletODSpec>(spec_hat);
    od_spec.validate();
    od = build_od_data(data);
    theta = pack(od_spec);
    eval = [&od](const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd* scores) {
      DirichletOdEvaluator evaluator{*od};
      return evaluator(x, g, scores);
    };
  }

  const int k = static_cast<int>(theta.size());
  Eigen::VectorXd grad(k);
  Eigen::MatrixXd scores;
  const double value = eval(theta, grad, &scores);
  if (!std::isfinite(value)) throw std::runtime_error("sandwich_variance: objective not finite");
  const int m = static_cast<int>(scores.rows());

  // Var(m.) from the per-observation scores
  const Eigen::RowVectorXd score_mean = scores.colwise().mean();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(k, k);
  for (int r = 0; r < m; ++r) {
    const Eigen::RowVectorXd centered = scores.row(r) - score_mean;
    S.noalias() += centered.transpose() * centered;
  }
  S /= m;

  // E(m..) by central differences of the analytic gradient
  Eigen::MatrixXd H(k, k);
  Eigen::VectorXd gp(k), gm(k);
  for (int j = 0; j < k; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(theta[j]));
    Eigen::VectorXd tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    if (!std::isfinite(eval(tp, gp, nullptr)) || !std::isfinite(eval(tm, gm, nullptr)))
      throw std::runtime_error("sandwich_variance: objective not finite near theta_hat");
    H.col(j) = (gp - gm) / (2.0 * h);
  }
  H = 0.5 * (H + H.transpose()).eval();

  Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
  if (!lu.isInvertible()) throw std::runtime_error("sandwich_variance: singular Hessian");
  const Eigen::MatrixXd Hinv = lu.inverse();
  Eigen::MatrixXd V = Hinv * S * Hinv;
  return 0.5 * (V + V.transpose());
}

}  // namespace simplexts

#include "simplexts/models.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace simplexts {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

void check_square(const Eigen::MatrixXd& m, int q, const char* name) {
  if (m.rows() != q || m.cols() != q) {
    std::ostringstream os;
    os << name << " must be " << q << "x" << q << ", got " << m.rows() << "x" << m.cols();
    fail(os.str());
  }
}

void check_chol(const Eigen::MatrixXd& L, int q) {
  check_square(L, q, "chol_V");
  for (int i = 0; i < q; ++i) {
    if (!(L(i, i) > 0.0)) fail("chol_V diagonal must be strictly positive");
    for (int j = i + 1; j < q; ++j)
      if (L(i, j) != 0.0) fail("chol_V must be lower triangular");
  }
}

}  // namespace

void DirichletFiniteSpec::validate() const {
  if (d < 2) fail("spec: d must be at least 2");
  if (p < 1) fail("spec: order p must be at least 1");
  const int q = d - 1;
  if (A0.size() != q) fail("spec: A0 must have d-1 entries");
  if (static_cast<int>(A.size()) != p) fail("spec: need p lag matrices");
  for (const auto& Ak : A) check_square(Ak, q, "A_k");
  if (static_cast<int>(a.size()) != p) fail("spec: need p entropy coefficients");
}

void DirichletODSpec::validate() const {
  if (d < 2) fail("spec: d must be at least 2");
  const int q = d - 1;
  if (C.size() != q) fail("spec: C must have d-1 entries");
  check_square(A, q, "A");
  check_square(B, q, "B");
}

void LogisticNormalFiniteSpec::validate() const {
  if (d < 2) fail("spec: d must be at least 2");
  if (p < 1) fail("spec: order p must be at least 1");
  const int q = d - 1;
  if (A0.size() != q) fail("spec: A0 must have d-1 entries");
  if (static_cast<int>(A.size()) != p) fail("spec: need p lag matrices");
  for (const auto& Ak : A) check_square(Ak, q, "A_k");
  if (static_cast<int>(a.size()) != p) fail("spec: need p entropy coefficients");
  check_chol(chol_V, q);
}

void LogisticNormalODSpec::validate() const {
  if (d < 2) fail("spec: d must be at least 2");
  const int q = d - 1;
  if (C.size() != q) fail("spec: C must have d-1 entries");
  check_square(A, q, "A");
  check_square(B, q, "B");
  check_chol(chol_V, q);
}

int spec_dim(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.d; }, spec);
}

bool spec_is_dirichlet(const ModelSpec& spec) {
  return std::holds_alternative<DirichletFiniteSpec>(spec) ||
         std::holds_alternative<DirichletODSpec>(spec);
}

void validate_spec(const ModelSpec& spec) {
  std::visit([](const auto& s) { s.validate(); }, spec);
}

double spectral_radius(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) fail("spectral_radius: matrix must be square");
  if (m.rows() == 0) return 0.0;
  if (!m.allFinite()) fail("spectral_radius: matrix must be finite");
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("spectral_radius: QR iteration did not converge");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

StationarityReport check_stationarity(const ModelSpec& spec) {
  StationarityReport report;
  if (const auto* od = std::get_if<DirichletODSpec>(&spec)) {
    report.rho_B = spectral_radius(od->B);
    report.abs_b = std::abs(od->b);
  } else if (const auto* od = std::get_if<LogisticNormalODSpec>(&spec)) {
    report.rho_B = spectral_radius(od->B);
    report.abs_b = std::abs(od->b);
  } else {
    return report;  // finite-order: vacuously satisfied
  }
  report.satisfied = report.rho_B < 1.0 && report.abs_b < 1.0;
  return report;
}

const Eigen::VectorXd& LatentPath::mu_at(int t) const {
  if (t < start || t >= end()) throw std::out_of_range("LatentPath: time index out of range");
  return mu[t - start];
}

double LatentPath::phi_at(int t) const {
  if (t < start || t >= end()) throw std::out_of_range("LatentPath: time index out of range");
  return phi[t - start];
}

LatentPath filter_dirichlet_finite(const DirichletFiniteSpec& spec,
                                   const std::vector<Composition>& data) {
  spec.validate();
  const int n = static_cast<int>(data.size());
  if (n <= spec.p) fail("filter: need more observations than the order p");
  LatentPath path;
  path.start = spec.p;
  path.mu.reserve(n - spec.p);
  path.phi.reserve(n - spec.p);
  for (int t = spec.p; t < n; ++t) {
    Eigen::VectorXd mu = spec.A0;
    double logphi = spec.a0;
    for (int k = 1; k <= spec.p; ++k) {
      mu += spec.A[k - 1] * h1(data[t - k]);
      logphi += spec.a[k - 1] * shannon_entropy(data[t - k]);
    }
    path.mu.push_back(std::move(mu));
    path.phi.push_back(std::exp(logphi));
  }
  return path;
}

LatentPath filter_dirichlet_od(const DirichletODSpec& spec, const std::vector<Composition>& data,
                               const LatentInit& init) {
  spec.validate();
  const int n = static_cast<int>(data.size());
  if (n < 1) fail("filter: need at least one observation");
  Eigen::VectorXd mu = init.mu0.size() > 0 ? init.mu0 : Eigen::VectorXd::Zero(spec.d - 1);
  if (mu.size() != spec.d - 1) fail("filter: init.mu0 has wrong dimension");
  double logphi = init.logphi0;
  LatentPath path;
  path.start = 0;
  path.mu.reserve(n);
  path.phi.reserve(n);
  path.mu.push_back(mu);
  path.phi.push_back(std::exp(logphi));
  for (int t = 1; t < n; ++t) {
    mu = spec.C + spec.A * h1(data[t - 1]) + spec.B * mu;
    logphi = spec.c + spec.a * shannon_entropy(data[t - 1]) + spec.b * logphi;
    path.mu.push_back(mu);
    path.phi.push_back(std::exp(logphi));
  }
  return path;
}

LatentPath filter_ln_finite(const LogisticNormalFiniteSpec& spec,
                            const std::vector<Composition>& data) {
  spec.validate();
  const int n = static_cast<int>(data.size());
  if (n <= spec.p) fail("filter: need more observations than the order p");
  LatentPath path;
  path.start = spec.p;
  for (int t = spec.p; t < n; ++t) {
    Eigen::VectorXd mu = spec.A0;
    double logphi = 0.0;  // no dispersion intercept
    for (int k = 1; k <= spec.p; ++k) {
      mu += spec.A[k - 1] * h1(data[t - k]);
      logphi += spec.a[k - 1] * shannon_entropy(data[t - k]);
    }
    path.mu.push_back(std::move(mu));
    path.phi.push_back(std::exp(logphi));
  }
  return path;
}

LatentPath filter_ln_od(const LogisticNormalODSpec& spec, const std::vector<Composition>& data,
                        const LatentInit& init) {
  spec.validate();
  const int n = static_cast<int>(data.size());
  if (n < 1) fail("filter: need at least one observation");
  Eigen::VectorXd mu = init.mu0.size() > 0 ? init.mu0 : Eigen::VectorXd::Zero(spec.d - 1);
  if (mu.size() != spec.d - 1) fail("filter: init.mu0 has wrong dimension");
  double logphi = init.logphi0;
  LatentPath path;
  path.start = 0;
  path.mu.push_back(mu);
  path.phi.push_back(std::exp(logphi));
  for (int t = 1; t < n; ++t) {
    mu = spec.C + spec.A * h1(data[t - 1]) + spec.B * mu;
    logphi = spec.a * shannon_entropy(data[t - 1]) + spec.b * logphi;
    path.mu.push_back(mu);
    path.phi.push_back(std::exp(logphi));
  }
  return path;
}

LatentPath filter(const ModelSpec& spec, const std::vector<Composition>& data) {
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec))
    return filter_dirichlet_finite(*s, data);
  if (const auto* s = std::get_if<DirichletODSpec>(&spec))
    return filter_dirichlet_od(*s, data, LatentInit::zeros(s->d));
  if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec))
    return filter_ln_finite(*s, data);
  const auto& s = std::get<LogisticNormalODSpec>(spec);
  return filter_ln_od(s, data, LatentInit::zeros(s.d));
}

Stepper::Stepper(ModelSpec spec) : spec_(std::move(spec)) {
  validate_spec(spec_);
  d_ = spec_dim(spec_);
  reset();
}

void Stepper::reset(const std::optional<Composition>& initial,
                    const std::optional<LatentInit>& init) {
  const Composition start = initial ? *initial : Composition::uniform(d_);
  if (start.dim() != d_) fail("Stepper: initial composition has wrong dimension");
  int p = 1;
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec_)) p = s->p;
  if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec_)) p = s->p;
  lags_.assign(p, start);
  const LatentInit state = init ? *init : LatentInit::zeros(d_);
  od_mu_ = state.mu0.size() > 0 ? state.mu0 : Eigen::VectorXd::Zero(d_ - 1);
  if (od_mu_.size() != d_ - 1) fail("Stepper: init.mu0 has wrong dimension");
  od_logphi_ = state.logphi0;
}

Eigen::VectorXd Stepper::next_mu() const {
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec_)) {
    Eigen::VectorXd mu = s->A0;
    for (int k = 1; k <= s->p; ++k) mu += s->A[k - 1] * h1(lags_[k - 1]);
    return mu;
  }
  if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec_)) {
    Eigen::VectorXd mu = s->A0;
    for (int k = 1; k <= s->p; ++k) mu += s->A[k - 1] * h1(lags_[k - 1]);
    return mu;
  }
  return od_mu_;
}

double Stepper::next_phi() const {
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec_)) {
    double logphi = s->a0;
    for (int k = 1; k <= s->p; ++k) logphi += s->a[k - 1] * shannon_entropy(lags_[k - 1]);
    return std::exp(logphi);
  }
  if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec_)) {
    double logphi = 0.0;
    for (int k = 1; k <= s->p; ++k) logphi += s->a[k - 1] * shannon_entropy(lags_[k - 1]);
    return std::exp(logphi);
  }
  return std::exp(od_logphi_);
}

DirichletParams Stepper::next_dirichlet() const {
  if (!spec_is_dirichlet(spec_)) fail("Stepper: spec is not a Dirichlet model");
  return DirichletParams(alr_inv(next_mu()), next_phi());
}

LogisticNormalParams Stepper::next_logistic_normal() const {
  const Eigen::MatrixXd* L = nullptr;
  if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec_)) L = &s->chol_V;
  if (const auto* s = std::get_if<LogisticNormalODSpec>(&spec_)) L = &s->chol_V;
  if (L == nullptr) fail("Stepper: spec is not a logistic-normal model");
  const double scale = std::sqrt(next_phi());
  return LogisticNormalParams::from_cholesky(next_mu(), scale * (*L));
}

void Stepper::advance(const Composition& y) {
  if (y.dim() != d_) fail("Stepper: observation has wrong dimension");
  if (const auto* s = std::get_if<DirichletODSpec>(&spec_)) {
    od_mu_ = s->C + s->A * h1(y) + s->B * od_mu_;
    od_logphi_ = s->c + s->a * shannon_entropy(y) + s->b * od_logphi_;
    return;
  }
  if (const auto* s = std::get_if<LogisticNormalODSpec>(&spec_)) {
    od_mu_ = s->C + s->A * h1(y) + s->B * od_mu_;
    od_logphi_ = s->a * shannon_entropy(y) + s->b * od_logphi_;
    return;
  }
  for (std::size_t k = lags_.size() - 1; k > 0; --k) lags_[k] = lags_[k - 1];
  lags_[0] = y;
}

void Stepper::prime(const std::vector<Composition>& history) {
  for (const auto& y : history) advance(y);
}

Composition Stepper::sample_next(Rng& rng) {
  Composition y = spec_is_dirichlet(spec_) ? dirichlet_sample(next_dirichlet(), rng)
                                           : logistic_normal_sample(next_logistic_normal(), rng);
  advance(y);
  return y;
}

std::vector<Composition> simulate(const ModelSpec& spec, int n, int burn_in, Rng& rng,
                                  const std::optional<Composition>& initial,
                                  const std::optional<LatentInit>& init) {
  if (n < 0 || burn_in < 0) fail("simulate: n and burn_in must be non-negative");
  const StationarityReport report = check_stationarity(spec);
  if (!report.satisfied) {
    std::ostringstream os;
    os << "simulate: stationarity condition max(|b|, rho(B)) < 1 violated (rho_B=" << report.rho_B
       << ", |b|=" << report.abs_b << ")";
    throw std::domain_error(os.str());
  }
  Stepper stepper(spec);
  stepper.reset(initial, init);
  std::vector<Composition> out;
  out.reserve(n);
  for (int t = 0; t < burn_in + n; ++t) {
    Composition y = stepper.sample_next(rng);
    if (t >= burn_in) out.push_back(std::move(y));
  }
  return out;
}

}  // namespace simplexts

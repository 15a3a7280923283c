#pragma once

#include <Eigen/Core>
#include <optional>
#include <variant>
#include <vector>

#include "simplexts/composition.hpp"
#include "simplexts/distributions.hpp"
#include "simplexts/rng.hpp"

namespace simplexts {

/// Finite-order Dirichlet autoregression:
///   mu_t   = A0 + sum_k A_k h1(Y_{t-k}),   lambda_t = alr_inv(mu_t)
///   phi_t  = exp(a0 + sum_k a_k h2(Y_{t-k}))
struct DirichletFiniteSpec {
  int d = 0;
  int p = 0;
  Eigen::VectorXd A0;                // d-1
  std::vector<Eigen::MatrixXd> A;    // p matrices, (d-1)x(d-1)
  double a0 = 0.0;
  std::vector<double> a;             // p

  void validate() const;
};

/// Observation-driven Dirichlet model:
///   mu_t      = C + A h1(Y_{t-1}) + B mu_{t-1}
///   log phi_t = c + a h2(Y_{t-1}) + b log phi_{t-1}
struct DirichletODSpec {
  int d = 0;
  Eigen::VectorXd C;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double c = 0.0;
  double a = 0.0;
  double b = 0.0;

  void validate() const;
};

/// Finite-order logistic-normal autoregression:
///   mu_t    = A0 + sum_k A_k h1(Y_{t-k})
///   Sigma_t = exp(sum_k a_k h2(Y_{t-k})) * V     (no dispersion intercept)
struct LogisticNormalFiniteSpec {
  int d = 0;
  int p = 0;
  Eigen::VectorXd A0;
  std::vector<Eigen::MatrixXd> A;
  std::vector<double> a;             // p, no intercept (identifiability)
  Eigen::MatrixXd chol_V;            // lower-triangular factor, V = L L'

  void validate() const;
  Eigen::MatrixXd V() const { return chol_V * chol_V.transpose(); }
};

/// Observation-driven logistic-normal model:
///   mu_t      = C + A h1(Y_{t-1}) + B mu_{t-1}
///   Sigma_t   = phi_t * V,  log phi_t = a h2(Y_{t-1}) + b log phi_{t-1}
struct LogisticNormalODSpec {
  int d = 0;
  Eigen::VectorXd C;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double a = 0.0;
  double b = 0.0;
  Eigen::MatrixXd chol_V;

  void validate() const;
  Eigen::MatrixXd V() const { return chol_V * chol_V.transpose(); }
};

using ModelSpec = std::variant<DirichletFiniteSpec, DirichletODSpec, LogisticNormalFiniteSpec,
                               LogisticNormalODSpec>;

int spec_dim(const ModelSpec& spec);
bool spec_is_dirichlet(const ModelSpec& spec);
void validate_spec(const ModelSpec& spec);

/// Largest eigenvalue modulus of a square matrix, through the real Schur
/// form. Non-convergence of the QR iteration is reported explicitly.
double spectral_radius(const Eigen::MatrixXd& m);

struct StationarityReport {
  bool satisfied = true;
  double rho_B = 0.0;
  double abs_b = 0.0;

  double margin() const { return 1.0 - (rho_B > abs_b ? rho_B : abs_b); }
};

/// Observation-driven specs report max(|b|, rho(B)) < 1; finite-order specs
/// are vacuously stationary.
StationarityReport check_stationarity(const ModelSpec& spec);

/// Initial latent state for the observation-driven recursions.
struct LatentInit {
  Eigen::VectorXd mu0;   // empty means zeros
  double logphi0 = 0.0;

  static LatentInit zeros(int d) {
    return LatentInit{Eigen::VectorXd::Zero(d - 1), 0.0};
  }
};

/// Per-time-step conditional parameters. Finite-order filters emit values
/// for t = p..n-1 only; observation-driven filters cover t = 0..n-1 with
/// the supplied init at t = 0.
struct LatentPath {
  int start = 0;
  std::vector<Eigen::VectorXd> mu;   // pre-link conditional mean, length n-start
  std::vector<double> phi;           // Dirichlet scale / logistic-normal multiplier

  int end() const { return start + static_cast<int>(mu.size()); }
  const Eigen::VectorXd& mu_at(int t) const;
  double phi_at(int t) const;
  Composition lambda_at(int t) const { return alr_inv(mu_at(t)); }
};

LatentPath filter_dirichlet_finite(const DirichletFiniteSpec& spec,
                                   const std::vector<Composition>& data);
LatentPath filter_dirichlet_od(const DirichletODSpec& spec, const std::vector<Composition>& data,
                               const LatentInit& init);
LatentPath filter_ln_finite(const LogisticNormalFiniteSpec& spec,
                            const std::vector<Composition>& data);
LatentPath filter_ln_od(const LogisticNormalODSpec& spec, const std::vector<Composition>& data,
                        const LatentInit& init);

LatentPath filter(const ModelSpec& spec, const std::vector<Composition>& data);

/// One-step state machine over any spec: tracks the information needed to
/// form the conditional law of the next observation. Used by simulation,
/// forecasting and perturbation experiments.
class Stepper {
 public:
  explicit Stepper(ModelSpec spec);

  /// Resets to the default state: all lags at the given composition
  /// (uniform when absent) and the zero latent state.
  void reset(const std::optional<Composition>& initial = std::nullopt,
             const std::optional<LatentInit>& init = std::nullopt);

  /// Feeds an observed history through the recursions.
  void prime(const std::vector<Composition>& history);

  /// Conditional parameters of the next observation.
  DirichletParams next_dirichlet() const;
  LogisticNormalParams next_logistic_normal() const;
  Eigen::VectorXd next_mu() const;
  double next_phi() const;

  /// Registers an observation, advancing the latent state.
  void advance(const Composition& y);

  /// Draws the next observation from the conditional law and advances.
  Composition sample_next(Rng& rng);

  const ModelSpec& spec() const { return spec_; }

 private:
  ModelSpec spec_;
  int d_ = 0;
  std::vector<Composition> lags_;  // finite-order: lags_[0] is Y_{t-1}
  Eigen::VectorXd od_mu_;
  double od_logphi_ = 0.0;
};

/// Simulates n observations after discarding burn_in steps, starting from
/// `initial` (uniform when absent) and the zero latent state. Rejects
/// observation-driven specs that violate max(|b|, rho(B)) < 1.
std::vector<Composition> simulate(const ModelSpec& spec, int n, int burn_in, Rng& rng,
                                  const std::optional<Composition>& initial = std::nullopt,
                                  const std::optional<LatentInit>& init = std::nullopt);

}  // namespace simplexts

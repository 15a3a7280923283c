#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "simplexts/composition.hpp"
#include "simplexts/models.hpp"

namespace simplexts {

enum class FitMethod { ConvexContrast, DirichletMLE, LNLeastSquares, LNQMLE };

std::string method_name(FitMethod method);

/// Conditional-mean block of a finite-order model (theta_1).
struct MeanParams {
  int d = 0;
  int p = 0;
  Eigen::VectorXd A0;
  std::vector<Eigen::MatrixXd> A;
};

struct FitResult {
  ModelSpec spec;
  FitMethod method = FitMethod::DirichletMLE;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool mean_only = false;            // dispersion block not estimated
  Eigen::VectorXd params;            // packed estimated parameters
  std::vector<std::string> param_names;
  std::optional<Eigen::VectorXd> se;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Canonical parameter packing (row-major matrices). Gradients and standard
// errors are always reported in these coordinates. For logistic-normal specs
// the V block is the lower-triangular Cholesky factor with log diagonal.
// ---------------------------------------------------------------------------
Eigen::VectorXd pack(const DirichletFiniteSpec& spec);
Eigen::VectorXd pack(const DirichletODSpec& spec);
Eigen::VectorXd pack(const LogisticNormalFiniteSpec& spec);
Eigen::VectorXd pack(const LogisticNormalODSpec& spec);
Eigen::VectorXd pack_spec(const ModelSpec& spec);
Eigen::VectorXd pack_mean(const MeanParams& params);

DirichletFiniteSpec unpack_dirichlet_finite(int d, int p, const Eigen::VectorXd& theta);
DirichletODSpec unpack_dirichlet_od(int d, const Eigen::VectorXd& theta);
LogisticNormalFiniteSpec unpack_ln_finite(int d, int p, const Eigen::VectorXd& theta);
LogisticNormalODSpec unpack_ln_od(int d, const Eigen::VectorXd& theta);
MeanParams unpack_mean(int d, int p, const Eigen::VectorXd& theta1);

std::vector<std::string> spec_param_names(const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Objective surfaces (exposed for gradient verification and reuse). Values
// are per-observation averages; gradients are in packed coordinates.
// ---------------------------------------------------------------------------
struct ObjectiveEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
};
using ContrastEval = ObjectiveEval;

/// Multinomial-style convex contrast (1/m) sum_t -sum_i Y_{i,t} log lambda_{i,t}.
ContrastEval convex_contrast(const MeanParams& theta1, const std::vector<Composition>& data);

/// Negative mean conditional Dirichlet log-likelihood. With fixed_phi the
/// dispersion is held at the given constant and excluded from the gradient.
ObjectiveEval dirichlet_finite_negloglik(const DirichletFiniteSpec& spec,
                                         const std::vector<Composition>& data,
                                         std::optional<double> fixed_phi = std::nullopt);
ObjectiveEval dirichlet_od_negloglik(const DirichletODSpec& spec,
                                     const std::vector<Composition>& data);

/// Gaussian QMLE criterion (1/m) sum_t [r_t' Sigma_t^{-1} r_t + log det Sigma_t].
ObjectiveEval ln_finite_qmle_objective(const LogisticNormalFiniteSpec& spec,
                                       const std::vector<Composition>& data);
ObjectiveEval ln_od_qmle_objective(const LogisticNormalODSpec& spec,
                                   const std::vector<Composition>& data);

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

FitResult fit_convex(const std::vector<Composition>& data, int p,
                     const std::optional<Eigen::VectorXd>& init = std::nullopt);

struct DirichletFitOptions {
  std::optional<double> fixed_phi;    // dispersion known; only the mean block is fit
  bool zero_A = false;                // lag matrices constrained to zero
  bool zero_a = false;                // entropy coefficients constrained to zero
  std::optional<Eigen::VectorXd> init;  // packed full-parameter start
};

FitResult fit_dirichlet_mle(const std::vector<Composition>& data, int p,
                            const DirichletFitOptions& options = {});
FitResult fit_dirichlet_mle_od(const std::vector<Composition>& data,
                               const DirichletFitOptions& options = {});

FitResult fit_ln_ls(const std::vector<Composition>& data, int p);

struct LNQmleOptions {
  bool estimate_entropy_coeffs = true;  // a_k free (otherwise held at zero)
  bool joint_refine = false;            // joint pass over all parameters after the two-step fit
};

FitResult fit_ln_qmle(const std::vector<Composition>& data, int p, const LNQmleOptions& options = {});
FitResult fit_ln_qmle_od(const std::vector<Composition>& data, const LNQmleOptions& options = {});

/// Parametric bootstrap: simulates `reps` series of length n from spec_hat,
/// refits each, returns the elementwise standard deviation of the packed
/// estimates. Non-converged replicates are dropped and counted; more than
/// 20% failures aborts.
using Refitter = std::function<FitResult(const std::vector<Composition>&)>;
Eigen::VectorXd bootstrap_se(const ModelSpec& spec_hat, int n, int reps, std::uint64_t seed,
                             const Refitter& refit, int threads = 0);
Eigen::VectorXd bootstrap_se(const ModelSpec& spec_hat, int n, int reps, std::uint64_t seed,
                             FitMethod method, int threads = 0);

/// Plug-in sandwich estimate E(m..)^{-1} Var(m.) E(m..)^{-1} of the
/// asymptotic variance of sqrt(n)(theta_hat - theta) for a fitted Dirichlet
/// model; divide by the number of likelihood terms for the finite-sample
/// covariance of theta_hat. For finite-order specs fitted under constraints,
/// pass the same options so the variance lives on the constrained surface.
Eigen::MatrixXd sandwich_variance(const ModelSpec& spec_hat, const std::vector<Composition>& data,
                                  const DirichletFitOptions& options = {});

/// Data-quality gate for ingested series: rejects compositions carrying
/// coordinates below 1e-12 after zero repair (a measurement problem, not a
/// numerical one). Applied by the CLI before fitting real data; simulated
/// series legitimately visit such corners under small Dirichlet shapes and
/// are not gated.
void check_data_quality(const std::vector<Composition>& data);

/// Identification guard for observation-driven fits: warns when A is
/// numerically rank deficient (smallest singular value < 1e-6 * largest).
std::optional<std::string> identification_warning(const Eigen::MatrixXd& A);

}  // namespace simplexts

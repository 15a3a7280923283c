#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "simplexts/estimation.hpp"
#include "simplexts/models.hpp"

namespace simplexts {

struct EstimatorChoice {
  FitMethod method = FitMethod::DirichletMLE;
  std::optional<double> fixed_phi;  // Dirichlet MLE with the dispersion known

  std::string label() const;
};

struct StudyConfig {
  ModelSpec true_spec;
  std::vector<int> sample_sizes;
  int replications = 200;
  std::vector<EstimatorChoice> estimators;
  std::uint64_t master_seed = 1;
  int burn_in = 1000;
};

struct StudyCell {
  int n = 0;
  std::string estimator;
  std::vector<std::string> param_names;
  Eigen::VectorXd rmse;
  int failures = 0;
  int replications = 0;
  bool aborted = false;  // more than 20% of replicates failed

  std::optional<double> rmse_for(const std::string& name) const;
};

struct StudyResult {
  std::vector<StudyCell> cells;

  const StudyCell* find(int n, const std::string& estimator) const;
};

/// The RMSE simulation study: for each sample size and replicate, simulate
/// from the true spec, fit with every estimator, and accumulate the root
/// mean squared error of each parameter over converged replicates.
/// Deterministic given the master seed; replicates run concurrently.
StudyResult run_rmse_study(const StudyConfig& config, int threads = 0);

struct ErgodicityReport {
  int n = 0;
  Eigen::VectorXd diff_h1;   // |running mean difference| per h1 coordinate
  double diff_entropy = 0.0;
  Eigen::VectorXd tol_h1;    // 4 * combined MC standard error
  double tol_entropy = 0.0;
  bool pass = false;
};

/// Two long simulations from deliberately different initial states; their
/// running means of h1 and of the Shannon entropy must agree within four
/// combined Monte Carlo standard errors (batch-means estimate).
ErgodicityReport run_ergodicity_check(const ModelSpec& spec, int n, std::uint64_t seed1,
                                      std::uint64_t seed2,
                                      const std::optional<Composition>& init1 = std::nullopt,
                                      const std::optional<Composition>& init2 = std::nullopt);

}  // namespace simplexts

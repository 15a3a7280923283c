#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "simplexts/composition.hpp"
#include "simplexts/models.hpp"

namespace simplexts {

/// The c-parameterized perturbation line for a species pair:
/// log EMR(c) = p * (slope * c + intercept).
struct PerturbationReport {
  int i = 0;
  int j = 0;
  double p = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  std::optional<double> equilibrium_c;  // root of the line in [0,1], when it exists
  bool identically_balanced = false;    // slope == intercept == 0
};

/// log(lambda_{i,t} / lambda_{j,t}) from a filtered latent path. The
/// reference species (index d-1) is allowed for either side.
double means_ratio_log(const LatentPath& latent, int t, int i, int j);

/// Evolution of the means ratio under a one-step perturbation gamma:
/// exp([A1(i,.) - A1(j,.)] h1(gamma)), rows of the reference species read
/// as zero. A1 is the first lag matrix ((d-1)x(d-1)).
double emr(const Eigen::MatrixXd& A1, int i, int j, const PerturbationVector& gamma);

/// Log-scale counterpart [A1(i,.) - A1(j,.)] h1(gamma); equals log RRR for
/// the logistic-normal model, and log emr always.
double delta_lr(const Eigen::MatrixXd& A1, int i, int j, const PerturbationVector& gamma);

struct EquilibriumResult {
  std::optional<double> c;           // root in [0,1] when one exists
  bool identically_balanced = false; // slope == intercept == 0
};

/// Root of slope*c + intercept over c in [0,1], with
/// slope = A1(i,j)+A1(j,i)-A1(i,i)-A1(j,j) and intercept = A1(j,j)-A1(i,j).
/// i and j must not be the reference species.
EquilibriumResult equilibrium_c(const Eigen::MatrixXd& A1, int i, int j);

PerturbationReport perturbation_report(const Eigen::MatrixXd& A1, int i, int j, double p);

/// Simulation-based multi-step perturbation ratio: perturbs the observation
/// k steps back by gamma and estimates
///   E[Y_i | perturbed] E[Y_j | unperturbed] / (E[Y_i | unperturbed] E[Y_j | perturbed])
/// ell steps after the perturbation, with common random numbers across the
/// two scenarios. For ell = 1 this converges to the EMR index.
double multistep_perturbation_ratio(const ModelSpec& spec, const std::vector<Composition>& history,
                                    int k, const PerturbationVector& gamma, int ell, int i, int j,
                                    int reps, std::uint64_t seed, int threads = 0);

}  // namespace simplexts

#include "simplexts/perturbation.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "simplexts/rng.hpp"
#include "simplexts/util.hpp"

namespace simplexts {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

void check_pair(int d, int i, int j) {
  if (i == j) fail("perturbation: species indices must differ");
  if (i < 0 || i >= d || j < 0 || j >= d) fail("perturbation: species index out of range");
}

// Row of A1 for a species, with the reference row identically zero.
Eigen::RowVectorXd species_row(const Eigen::MatrixXd& A1, int i) {
  const int q = static_cast<int>(A1.rows());
  if (i == q) return Eigen::RowVectorXd::Zero(q);
  return A1.row(i);
}

}  // namespace

double means_ratio_log(const LatentPath& latent, int t, int i, int j) {
  const Composition lambda = latent.lambda_at(t);
  check_pair(lambda.dim(), i, j);
  return std::log(lambda[i]) - std::log(lambda[j]);
}

double delta_lr(const Eigen::MatrixXd& A1, int i, int j, const PerturbationVector& gamma) {
  if (A1.rows() != A1.cols()) fail("perturbation: A1 must be square");
  const int d = static_cast<int>(A1.rows()) + 1;
  if (gamma.dim() != d) fail("perturbation: gamma dimension does not match A1");
  check_pair(d, i, j);
  const Eigen::VectorXd hg = gamma.values().head(d - 1);
  return (species_row(A1, i) - species_row(A1, j)).dot(hg);
}

double emr(const Eigen::MatrixXd& A1, int i, int j, const PerturbationVector& gamma) {
  return std::exp(delta_lr(A1, i, j, gamma));
}

EquilibriumResult equilibrium_c(const Eigen::MatrixXd& A1, int i, int j) {
  if (A1.rows() != A1.cols()) fail("perturbation: A1 must be square");
  const int q = static_cast<int>(A1.rows());
  check_pair(q, i, j);  // reference species excluded: the line needs matrix entries
  const double slope = A1(i, j) + A1(j, i) - A1(i, i) - A1(j, j);
  const double intercept = A1(j, j) - A1(i, j);
  EquilibriumResult result;
  if (slope == 0.0 && intercept == 0.0) {
    result.identically_balanced = true;
    return result;
  }
  if (slope == 0.0) return result;
  const double root = -intercept / slope;
  if (root >= 0.0 && root <= 1.0) result.c = root;
  return result;
}

PerturbationReport perturbation_report(const Eigen::MatrixXd& A1, int i, int j, double p) {
  if (!(p > 0.0)) fail("perturbation: p must be positive");
  const int q = static_cast<int>(A1.rows());
  check_pair(q, i, j);
  PerturbationReport report;
  report.i = i;
  report.j = j;
  report.p = p;
  report.slope = A1(i, j) + A1(j, i) - A1(i, i) - A1(j, j);
  report.intercept = A1(j, j) - A1(i, j);
  const EquilibriumResult eq = equilibrium_c(A1, i, j);
  report.equilibrium_c = eq.c;
  report.identically_balanced = eq.identically_balanced;
  return report;
}

double multistep_perturbation_ratio(const ModelSpec& spec, const std::vector<Composition>& history,
                                    int k, const PerturbationVector& gamma, int ell, int i, int j,
                                    int reps, std::uint64_t seed, int threads) {
  validate_spec(spec);
  const int d = spec_dim(spec);
  check_pair(d, i, j);
  if (ell < 1) fail("multistep_perturbation_ratio: horizon ell must be at least 1");
  if (reps < 2) fail("multistep_perturbation_ratio: needs at least 2 replicates");
  const int n = static_cast<int>(history.size());
  if (k < 1 || k > n) fail("multistep_perturbation_ratio: lag k out of range");
  if (!check_stationarity(spec).satisfied)
    throw std::domain_error("multistep_perturbation_ratio: spec violates stationarity");

  // Condition on the history up to the perturbed time t-k (index n-k);
  // later observations are not part of either scenario's conditioning set.
  const std::vector<Composition> prefix(history.begin(), history.begin() + (n - k));
  const Composition& at_lag = history[n - k];
  const Composition perturbed = perturb(at_lag, gamma);  // throws when non-positive

  Stepper base(spec);
  base.prime(prefix);
  Stepper unpert_state = base;
  unpert_state.advance(at_lag);
  Stepper pert_state = base;
  pert_state.advance(perturbed);

  // Common random numbers: both scenarios of a replicate use streams with
  // the same seed, so gamma = 0 gives a ratio of exactly one.
  Eigen::MatrixXd draws(reps, 4);  // Y_i pert, Y_j unpert, Y_i unpert, Y_j pert
  parallel_for(reps, threads, [&](int r) {
    const std::uint64_t rep_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    Stepper pert = pert_state;
    Rng rng_p(rep_seed);
    Composition yp = pert.sample_next(rng_p);
    for (int step = 1; step < ell; ++step) yp = pert.sample_next(rng_p);
    Stepper unpert = unpert_state;
    Rng rng_u(rep_seed);
    Composition yu = unpert.sample_next(rng_u);
    for (int step = 1; step < ell; ++step) yu = unpert.sample_next(rng_u);
    draws(r, 0) = yp[i];
    draws(r, 1) = yu[j];
    draws(r, 2) = yu[i];
    draws(r, 3) = yp[j];
  });

  const Eigen::VectorXd means = draws.colwise().mean();
  return (means[0] * means[1]) / (means[2] * means[3]);
}

}  // namespace simplexts

#pragma once

#include <Eigen/Core>
#include <functional>

namespace simplexts {

/// Objective callback: returns f(x) and fills grad (same size as x).
/// Non-finite values are treated as out-of-domain by the line search.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct BfgsOptions {
  double grad_tol = 1e-8;
  int max_iterations = 5000;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Dense BFGS with backtracking (Armijo) line search. Suited to the small,
/// smooth objectives in this package (tens of parameters).
BfgsResult minimize_bfgs(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                         const BfgsOptions& options = {});

/// Central finite-difference gradient with step 1e-6 * max(1, |x_i|).
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x);

}  // namespace simplexts

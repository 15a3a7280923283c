#include "simplexts/optimize.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace simplexts {

BfgsResult minimize_bfgs(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                         const BfgsOptions& options) {
  const int n = static_cast<int>(x0.size());
  BfgsResult result;
  result.x = x0;
  result.gradient.resize(n);
  result.value = fn(result.x, result.gradient);
  if (!std::isfinite(result.value))
    throw std::invalid_argument("minimize_bfgs: objective not finite at the starting point");

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);  // inverse Hessian approximation
  bool first_update = true;
  Eigen::VectorXd grad_new(n);
  int stagnant = 0;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (result.gradient.norm() < options.grad_tol) {
      result.converged = true;
      return result;
    }
    Eigen::VectorXd direction = -(H * result.gradient);
    double slope = direction.dot(result.gradient);
    if (!(slope < 0.0)) {
      H.setIdentity();
      first_update = true;
      direction = -result.gradient;
      slope = -result.gradient.squaredNorm();
    }

    double step = 1.0;
    double value_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < options.max_backtracks; ++ls) {
      x_new = result.x + step * direction;
      value_new = fn(x_new, grad_new);
      if (std::isfinite(value_new) && value_new <= result.value + options.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= options.backtrack;
    }
    result.iterations = iter + 1;
    if (!accepted) {
      result.line_search_failed = true;
      result.converged = result.gradient.norm() < options.grad_tol;
      return result;
    }

    const double decrease = result.value - value_new;
    const Eigen::VectorXd s = x_new - result.x;
    const Eigen::VectorXd y = grad_new - result.gradient;
    result.x = std::move(x_new);
    result.value = value_new;
    result.gradient = grad_new;

    // Progress below rounding noise. A stale curvature model can block steps
    // the true Hessian would allow, so reset it once; if the objective still
    // cannot be improved in double precision, stop rather than accept no-op
    // steps until the iteration cap.
    if (decrease <= 4.0 * std::numeric_limits<double>::epsilon() * (std::abs(result.value) + 1.0)) {
      if (++stagnant == 3) {
        H.setIdentity();
        first_update = true;
      } else if (stagnant >= 6) {
        result.converged = result.gradient.norm() < options.grad_tol;
        return result;
      }
    } else {
      stagnant = 0;
    }

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (first_update) {
        H *= sy / y.squaredNorm();
        first_update = false;
      }
      const Eigen::VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      // BFGS update of the inverse Hessian.
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose());
      const Eigen::MatrixXd cross = (Hy * s.transpose()) / sy;
      H -= cross + cross.transpose();
    }
  }
  result.converged = result.gradient.norm() < options.grad_tol;
  return result;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x) {
  Eigen::VectorXd grad(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace simplexts

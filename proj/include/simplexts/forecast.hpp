#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "simplexts/composition.hpp"
#include "simplexts/models.hpp"

namespace simplexts {

struct ForecastResult {
  int horizon = 0;
  double alpha = 0.05;
  int reps = 0;
  std::vector<Composition> mean;  // per step
  Eigen::MatrixXd lower;          // horizon x d, per-coordinate alpha/2 quantile
  Eigen::MatrixXd upper;          // horizon x d, per-coordinate 1-alpha/2 quantile
};

/// Monte Carlo forecast: filters the history to the current latent state,
/// simulates `reps` continuation paths of length `horizon`, and returns the
/// per-step per-coordinate empirical mean and quantiles (order statistics
/// with linear interpolation). Replicate streams derive from (seed, index),
/// so results depend only on the seed.
ForecastResult forecast(const ModelSpec& spec, const std::vector<Composition>& history,
                        int horizon, int reps, double alpha, std::uint64_t seed, int threads = 0);

/// Empirical quantile with linear interpolation between order statistics
/// (h = (n-1) p convention). `sorted` must be ascending.
double interpolated_quantile(const std::vector<double>& sorted, double prob);

}  // namespace simplexts

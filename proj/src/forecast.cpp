#include "simplexts/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "simplexts/rng.hpp"
#include "simplexts/util.hpp"

namespace simplexts {

double interpolated_quantile(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (sorted.size() == 1) return sorted[0];
  const double h = (sorted.size() - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - lo;
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

ForecastResult forecast(const ModelSpec& spec, const std::vector<Composition>& history,
                        int horizon, int reps, double alpha, std::uint64_t seed, int threads) {
  validate_spec(spec);
  if (horizon < 1) throw std::invalid_argument("forecast: horizon must be at least 1");
  if (reps < 100) throw std::invalid_argument("forecast: needs at least 100 replicates");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("forecast: alpha must be in (0,1)");
  int min_history = 1;
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec)) min_history = s->p;
  if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec)) min_history = s->p;
  if (static_cast<int>(history.size()) < min_history) {
    std::ostringstream os;
    os << "forecast: history too short (" << history.size() << " < " << min_history << ")";
    throw std::invalid_argument(os.str());
  }
  const StationarityReport report = check_stationarity(spec);
  if (!report.satisfied)
    throw std::domain_error("forecast: spec violates the stationarity condition");

  const int d = spec_dim(spec);
  Stepper primed(spec);
  primed.prime(history);

  // replicate paths stored by index, reduced deterministically afterwards
  std::vector<Eigen::MatrixXd> paths(reps);
  parallel_for(reps, threads, [&](int r) {
    Stepper stepper = primed;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    Eigen::MatrixXd path(horizon, d);
    for (int step = 0; step < horizon; ++step)
      path.row(step) = stepper.sample_next(rng).values().transpose();
    paths[r] = std::move(path);
  });

  ForecastResult result;
  result.horizon = horizon;
  result.alpha = alpha;
  result.reps = reps;
  result.lower.resize(horizon, d);
  result.upper.resize(horizon, d);
  std::vector<double> column(reps);
  for (int step = 0; step < horizon; ++step) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (int r = 0; r < reps; ++r) mean += paths[r].row(step).transpose();
    result.mean.emplace_back(mean / reps);
    for (int i = 0; i < d; ++i) {
      for (int r = 0; r < reps; ++r) column[r] = paths[r](step, i);
      std::sort(column.begin(), column.end());
      result.lower(step, i) = interpolated_quantile(column, alpha / 2.0);
      result.upper(step, i) = interpolated_quantile(column, 1.0 - alpha / 2.0);
    }
  }
  for (int step = 0; step < horizon; ++step)
    for (int i = 0; i < d; ++i) {
      const double m = result.mean[step][i];
      if (!(result.lower(step, i) <= m && m <= result.upper(step, i)))
        throw std::runtime_error("forecast: degenerate interval (mean outside quantile band)");
    }
  return result;
}

}  // namespace simplexts

#include "simplexts/experiments.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "simplexts/rng.hpp"
#include "simplexts/util.hpp"

namespace simplexts {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

// Fits one replicate with the chosen estimator and returns the packed
// error vector against the truth (mean block only for mean-only methods).
std::optional<Eigen::VectorXd> replicate_error(const EstimatorChoice& choice,
                                               const DirichletFiniteSpec& truth,
                                               const std::vector<Composition>& data) {
  try {
    FitResult fit;
    Eigen::VectorXd target;
    switch (choice.method) {
      case FitMethod::ConvexContrast: {
        fit = fit_convex(data, truth.p);
        MeanParams mean{truth.d, truth.p, truth.A0, truth.A};
        target = pack_mean(mean);
        break;
      }
      case FitMethod::DirichletMLE: {
        DirichletFitOptions options;
        options.fixed_phi = choice.fixed_phi;
        fit = fit_dirichlet_mle(data, truth.p, options);
        if (choice.fixed_phi) {
          MeanParams mean{truth.d, truth.p, truth.A0, truth.A};
          target = pack_mean(mean);
        } else {
          target = pack(truth);
        }
        break;
      }
      default:
        fail("run_rmse_study: estimator not supported for the Dirichlet study");
    }
    if (!fit.converged) return std::nullopt;
    return Eigen::VectorXd(fit.params - target);
  } catch (const std::exception& e) {
    log_debug(std::string("study replicate failed: ") + e.what());
    return std::nullopt;
  }
}

std::vector<std::string> choice_param_names(const EstimatorChoice& choice,
                                            const DirichletFiniteSpec& truth) {
  const ModelSpec spec = truth;
  std::vector<std::string> names = spec_param_names(spec);
  const bool mean_only =
      choice.method == FitMethod::ConvexContrast || choice.fixed_phi.has_value();
  if (mean_only) {
    const int q = truth.d - 1;
    names.resize(q + truth.p * q * q);
  }
  return names;
}

}  // namespace

std::string EstimatorChoice::label() const {
  std::string base = method_name(method);
  if (fixed_phi) {
    std::ostringstream os;
    os << base << "(phi=" << *fixed_phi << ")";
    return os.str();
  }
  return base;
}

std::optional<double> StudyCell::rmse_for(const std::string& name) const {
  for (std::size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name) return rmse[static_cast<Eigen::Index>(i)];
  return std::nullopt;
}

const StudyCell* StudyResult::find(int n, const std::string& estimator) const {
  for (const auto& cell : cells)
    if (cell.n == n && cell.estimator == estimator) return &cell;
  return nullptr;
}

StudyResult run_rmse_study(const StudyConfig& config, int threads) {
  if (config.replications < 2) fail("run_rmse_study: needs at least 2 replications");
  if (config.sample_sizes.empty()) fail("run_rmse_study: no sample sizes");
  if (config.estimators.empty()) fail("run_rmse_study: no estimators");
  const auto* truth = std::get_if<DirichletFiniteSpec>(&config.true_spec);
  if (truth == nullptr)
    fail("run_rmse_study: the study targets finite-order Dirichlet specs");
  truth->validate();
  if (!check_stationarity(config.true_spec).satisfied)
    throw std::domain_error("run_rmse_study: true spec violates stationarity");

  StudyResult result;
  const int reps = config.replications;
  const int n_est = static_cast<int>(config.estimators.size());
  for (std::size_t size_idx = 0; size_idx < config.sample_sizes.size(); ++size_idx) {
    const int n = config.sample_sizes[size_idx];
    // errors[estimator][replicate]
    std::vector<std::vector<std::optional<Eigen::VectorXd>>> errors(
        n_est, std::vector<std::optional<Eigen::VectorXd>>(reps));
    parallel_for(reps, threads, [&](int r) {
      Rng rng(derive_seed(config.master_seed,
                          static_cast<std::uint64_t>(size_idx) * reps + r));
      const std::vector<Composition> data = simulate(config.true_spec, n, config.burn_in, rng);
      for (int e = 0; e < n_est; ++e)
        errors[e][r] = replicate_error(config.estimators[e], *truth, data);
    });

    for (int e = 0; e < n_est; ++e) {
      StudyCell cell;
      cell.n = n;
      cell.estimator = config.estimators[e].label();
      cell.param_names = choice_param_names(config.estimators[e], *truth);
      cell.replications = reps;
      Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(cell.param_names.size());
      int ok = 0;
      for (int r = 0; r < reps; ++r) {
        if (!errors[e][r]) continue;
        if (errors[e][r]->size() != sumsq.size())
          throw std::runtime_error("run_rmse_study: estimator output size mismatch");
        sumsq += errors[e][r]->cwiseAbs2();
        ++ok;
      }
      cell.failures = reps - ok;
      if (cell.failures * 5 > reps) {
        cell.aborted = true;
        cell.rmse = Eigen::VectorXd::Constant(sumsq.size(),
                                              std::numeric_limits<double>::quiet_NaN());
        log_error("study cell aborted: " + cell.estimator + " at n=" + std::to_string(n) +
                  " had " + std::to_string(cell.failures) + " failures");
      } else {
        cell.rmse = (sumsq / ok).cwiseSqrt();
      }
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

ErgodicityReport run_ergodicity_check(const ModelSpec& spec, int n, std::uint64_t seed1,
                                      std::uint64_t seed2,
                                      const std::optional<Composition>& init1,
                                      const std::optional<Composition>& init2) {
  validate_spec(spec);
  if (n < 100) fail("run_ergodicity_check: n too small");
  if (!check_stationarity(spec).satisfied)
    throw std::domain_error("run_ergodicity_check: spec violates the stationarity condition");
  const int d = spec_dim(spec);
  const int q = d - 1;

  // Deliberately different default initial states.
  Composition start1 = init1 ? *init1 : Composition::uniform(d);
  Composition start2 = [&]() {
    if (init2) return *init2;
    Eigen::VectorXd w(d);
    for (int i = 0; i < d; ++i) w[i] = std::pow(2.0, -(i + 1));
    return Composition(w / w.sum());
  }();

  struct ChainStats {
    Eigen::VectorXd mean_h1;
    double mean_h2 = 0.0;
    Eigen::VectorXd se_h1;
    double se_h2 = 0.0;
  };
  const auto run_chain = [&](std::uint64_t seed, const Composition& start) {
    Rng rng(seed);
    const std::vector<Composition> path = simulate(spec, n, 0, rng, start);
    ChainStats stats;
    stats.mean_h1 = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd h1s(n, q);
    Eigen::VectorXd h2s(n);
    for (int t = 0; t < n; ++t) {
      h1s.row(t) = h1(path[t]).transpose();
      h2s[t] = shannon_entropy(path[t]);
    }
    stats.mean_h1 = h1s.colwise().mean().transpose();
    stats.mean_h2 = h2s.mean();
    // batch means standard error of the mean of a dependent sequence
    const int batches = 100;
    const int len = n / batches;
    Eigen::MatrixXd bm_h1(batches, q);
    Eigen::VectorXd bm_h2(batches);
    for (int b = 0; b < batches; ++b) {
      bm_h1.row(b) = h1s.middleRows(b * len, len).colwise().mean();
      bm_h2[b] = h2s.segment(b * len, len).mean();
    }
    stats.se_h1 = ((bm_h1.rowwise() - bm_h1.colwise().mean()).cwiseAbs2().colwise().sum() /
                   (batches - 1) / batches)
                      .cwiseSqrt()
                      .transpose();
    stats.se_h2 = std::sqrt((bm_h2.array() - bm_h2.mean()).square().sum() / (batches - 1) /
                            batches);
    return stats;
  };

  const ChainStats one = run_chain(seed1, start1);
  const ChainStats two = run_chain(seed2, start2);

  ErgodicityReport report;
  report.n = n;
  report.diff_h1 = (one.mean_h1 - two.mean_h1).cwiseAbs();
  report.diff_entropy = std::abs(one.mean_h2 - two.mean_h2);
  report.tol_h1 = 4.0 * (one.se_h1.cwiseAbs2() + two.se_h1.cwiseAbs2()).cwiseSqrt();
  report.tol_entropy = 4.0 * std::sqrt(one.se_h2 * one.se_h2 + two.se_h2 * two.se_h2);
  report.pass = (report.diff_h1.array() <= report.tol_h1.array()).all() &&
                report.diff_entropy <= report.tol_entropy;
  return report;
}

}  // namespace simplexts

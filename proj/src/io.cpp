#include "simplexts/io.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "simplexts/util.hpp"

namespace simplexts {

using nlohmann::json;

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& key) {
  if (!j.is_array()) throw std::runtime_error("spec: '" + key + "' must be an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty())
    throw std::runtime_error("spec: '" + key + "' must be a non-empty array of rows");
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(j.size(), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != cols) throw std::runtime_error("spec: ragged matrix in '" + key + "'");
    for (std::size_t c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

const json& require(const json& j, const std::string& key) {
  if (!j.contains(key)) throw std::runtime_error("spec: missing key '" + key + "'");
  return j.at(key);
}

Eigen::MatrixXd chol_from_V_json(const json& j) {
  const Eigen::MatrixXd V = matrix_from_json(j, "V");
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("spec: 'V' is not symmetric positive definite");
  return llt.matrixL();
}

}  // namespace

json spec_to_json(const ModelSpec& spec) {
  json j;
  if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec)) {
    j["family"] = "dirichlet";
    j["kind"] = "finite";
    j["d"] = s->d;
    j["p"] = s->p;
    j["A0"] = vector_to_json(s->A0);
    json lags = json::array();
    for (const auto& Ak : s->A) lags.push_back(matrix_to_json(Ak));
    j["A"] = lags;
    j["a0"] = s->a0;
    j["a"] = s->a;
  } else if (const auto* s = std::get_if<DirichletODSpec>(&spec)) {
    j["family"] = "dirichlet";
    j["kind"] = "od";
    j["d"] = s->d;
    j["C"] = vector_to_json(s->C);
    j["A"] = matrix_to_json(s->A);
    j["B"] = matrix_to_json(s->B);
    j["c"] = s->c;
    j["a"] = s->a;
    j["b"] = s->b;
  } else if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec)) {
    j["family"] = "logistic_normal";
    j["kind"] = "finite";
    j["d"] = s->d;
    j["p"] = s->p;
    j["A0"] = vector_to_json(s->A0);
    json lags = json::array();
    for (const auto& Ak : s->A) lags.push_back(matrix_to_json(Ak));
    j["A"] = lags;
    j["a"] = s->a;
    j["V"] = matrix_to_json(s->V());
  } else {
    const auto& od = std::get<LogisticNormalODSpec>(spec);
    j["family"] = "logistic_normal";
    j["kind"] = "od";
    j["d"] = od.d;
    j["C"] = vector_to_json(od.C);
    j["A"] = matrix_to_json(od.A);
    j["B"] = matrix_to_json(od.B);
    j["a"] = od.a;
    j["b"] = od.b;
    j["V"] = matrix_to_json(od.V());
  }
  return j;
}

ModelSpec spec_from_json(const json& j) {
  const std::string family = require(j, "family").get<std::string>();
  const std::string kind = require(j, "kind").get<std::string>();
  const int d = require(j, "d").get<int>();
  if (family == "dirichlet" && kind == "finite") {
    DirichletFiniteSpec s;
    s.d = d;
    s.p = require(j, "p").get<int>();
    s.A0 = vector_from_json(require(j, "A0"), "A0");
    for (const auto& m : require(j, "A")) s.A.push_back(matrix_from_json(m, "A"));
    s.a0 = require(j, "a0").get<double>();
    s.a = require(j, "a").get<std::vector<double>>();
    s.validate();
    return s;
  }
  if (family == "dirichlet" && kind == "od") {
    DirichletODSpec s;
    s.d = d;
    s.C = vector_from_json(require(j, "C"), "C");
    s.A = matrix_from_json(require(j, "A"), "A");
    s.B = matrix_from_json(require(j, "B"), "B");
    s.c = require(j, "c").get<double>();
    s.a = require(j, "a").get<double>();
    s.b = require(j, "b").get<double>();
    s.validate();
    return s;
  }
  if (family == "logistic_normal" && kind == "finite") {
    LogisticNormalFiniteSpec s;
    s.d = d;
    s.p = require(j, "p").get<int>();
    s.A0 = vector_from_json(require(j, "A0"), "A0");
    for (const auto& m : require(j, "A")) s.A.push_back(matrix_from_json(m, "A"));
    s.a = require(j, "a").get<std::vector<double>>();
    s.chol_V = chol_from_V_json(require(j, "V"));
    s.validate();
    return s;
  }
  if (family == "logistic_normal" && kind == "od") {
    LogisticNormalODSpec s;
    s.d = d;
    s.C = vector_from_json(require(j, "C"), "C");
    s.A = matrix_from_json(require(j, "A"), "A");
    s.B = matrix_from_json(require(j, "B"), "B");
    s.a = require(j, "a").get<double>();
    s.b = require(j, "b").get<double>();
    s.chol_V = chol_from_V_json(require(j, "V"));
    s.validate();
    return s;
  }
  throw std::runtime_error("spec: unknown family/kind '" + family + "/" + kind + "'");
}

ModelSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open spec file '" + path + "'");
  json j;
  in >> j;
  return spec_from_json(j);
}

void save_spec(const ModelSpec& spec, const std::string& path) {
  write_text_file(path, spec_to_json(spec).dump(2) + "\n");
}

json fit_result_to_json(const FitResult& result) {
  json j;
  j["method"] = method_name(result.method);
  j["objective"] = result.objective;
  j["converged"] = result.converged;
  j["iterations"] = result.iterations;
  j["gradient_norm"] = result.gradient_norm;
  j["mean_only"] = result.mean_only;
  json params = json::object();
  for (std::size_t i = 0; i < result.param_names.size(); ++i)
    params[result.param_names[i]] = result.params[static_cast<Eigen::Index>(i)];
  j["parameters"] = params;
  j["parameter_names"] = result.param_names;
  j["parameter_values"] = vector_to_json(result.params);
  j["spec"] = spec_to_json(result.spec);
  if (result.se) j["se"] = vector_to_json(*result.se);
  j["warnings"] = result.warnings;
  return j;
}

json forecast_to_json(const ForecastResult& result) {
  json j;
  j["horizon"] = result.horizon;
  j["alpha"] = result.alpha;
  j["reps"] = result.reps;
  json steps = json::array();
  for (int step = 0; step < result.horizon; ++step) {
    json row;
    row["step"] = step + 1;
    row["mean"] = vector_to_json(result.mean[step].values());
    row["lower"] = vector_to_json(result.lower.row(step).transpose());
    row["upper"] = vector_to_json(result.upper.row(step).transpose());
    steps.push_back(row);
  }
  j["steps"] = steps;
  return j;
}

std::string forecast_to_csv(const ForecastResult& result) {
  std::ostringstream os;
  os << "step,coordinate,mean,lower,upper\n";
  const int d = result.mean.empty() ? 0 : result.mean[0].dim();
  for (int step = 0; step < result.horizon; ++step)
    for (int i = 0; i < d; ++i)
      os << (step + 1) << "," << (i + 1) << "," << format_double(result.mean[step][i]) << ","
         << format_double(result.lower(step, i)) << "," << format_double(result.upper(step, i))
         << "\n";
  return os.str();
}

json perturbation_report_to_json(const PerturbationReport& report) {
  json j;
  j["i"] = report.i + 1;
  j["j"] = report.j + 1;
  j["p"] = report.p;
  j["slope"] = report.slope;
  j["intercept"] = report.intercept;
  if (report.equilibrium_c)
    j["equilibrium_c"] = *report.equilibrium_c;
  else
    j["equilibrium_c"] = nullptr;
  j["identically_balanced"] = report.identically_balanced;
  return j;
}

json study_result_to_json(const StudyResult& result) {
  json cells = json::array();
  for (const auto& cell : result.cells) {
    json c;
    c["n"] = cell.n;
    c["estimator"] = cell.estimator;
    c["param_names"] = cell.param_names;
    c["rmse"] = vector_to_json(cell.rmse);
    c["failures"] = cell.failures;
    c["replications"] = cell.replications;
    c["aborted"] = cell.aborted;
    cells.push_back(c);
  }
  return json{{"cells", cells}};
}

std::string study_result_to_csv(const StudyResult& result) {
  // union of parameter names, in first-seen order
  std::vector<std::string> columns;
  for (const auto& cell : result.cells)
    for (const auto& name : cell.param_names)
      if (std::find(columns.begin(), columns.end(), name) == columns.end())
        columns.push_back(name);
  std::ostringstream os;
  os << "n,estimator";
  for (const auto& name : columns) os << "," << name;
  os << "\n";
  for (const auto& cell : result.cells) {
    os << cell.n << "," << cell.estimator;
    for (const auto& name : columns) {
      const auto value = cell.rmse_for(name);
      os << ",";
      if (value) os << format_double(*value);
    }
    os << "\n";
  }
  return os.str();
}

json study_config_to_json(const StudyConfig& config) {
  json j;
  j["true_spec"] = spec_to_json(config.true_spec);
  j["sample_sizes"] = config.sample_sizes;
  j["replications"] = config.replications;
  json estimators = json::array();
  for (const auto& choice : config.estimators) {
    json e;
    e["method"] = method_name(choice.method);
    if (choice.fixed_phi) e["fixed_phi"] = *choice.fixed_phi;
    estimators.push_back(e);
  }
  j["estimators"] = estimators;
  j["seed"] = config.master_seed;
  j["burn_in"] = config.burn_in;
  return j;
}

StudyConfig study_config_from_json(const json& j) {
  StudyConfig config;
  config.true_spec = spec_from_json(require(j, "true_spec"));
  config.sample_sizes = require(j, "sample_sizes").get<std::vector<int>>();
  config.replications = require(j, "replications").get<int>();
  for (const auto& e : require(j, "estimators")) {
    EstimatorChoice choice;
    std::string name;
    if (e.is_string()) {
      name = e.get<std::string>();
    } else {
      name = require(e, "method").get<std::string>();
      if (e.contains("fixed_phi") && !e["fixed_phi"].is_null())
        choice.fixed_phi = e["fixed_phi"].get<double>();
    }
    if (name == "convex" || name == "convex_contrast")
      choice.method = FitMethod::ConvexContrast;
    else if (name == "mle" || name == "dirichlet_mle")
      choice.method = FitMethod::DirichletMLE;
    else
      throw std::runtime_error("study: unknown estimator '" + name + "'");
    config.estimators.push_back(choice);
  }
  if (j.contains("seed")) config.master_seed = j["seed"].get<std::uint64_t>();
  if (j.contains("burn_in")) config.burn_in = j["burn_in"].get<int>();
  return config;
}

std::string compositions_to_csv(const std::vector<Composition>& data) {
  std::ostringstream os;
  const int d = data.empty() ? 0 : data[0].dim();
  os << "t";
  for (int i = 0; i < d; ++i) os << ",y" << (i + 1);
  os << "\n";
  for (std::size_t t = 0; t < data.size(); ++t) {
    os << (t + 1);
    for (int i = 0; i < d; ++i) os << "," << format_double(data[t][i]);
    os << "\n";
  }
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace simplexts

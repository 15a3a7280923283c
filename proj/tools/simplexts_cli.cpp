// Command-line front end for the simplex time-series library: simulate,
// fit, forecast, perturb and study subcommands driven by JSON configs.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "simplexts/estimation.hpp"
#include "simplexts/experiments.hpp"
#include "simplexts/forecast.hpp"
#include "simplexts/ingest.hpp"
#include "simplexts/io.hpp"
#include "simplexts/models.hpp"
#include "simplexts/perturbation.hpp"
#include "simplexts/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace simplexts;

namespace {

struct RunContext {
  std::string command;
  fs::path config_path;
  fs::path config_dir;
  fs::path out_dir;  // defaults to the config directory
  json config;
  std::uint64_t seed = 1;
  int threads = 0;
};

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  json j;
  in >> j;
  return j;
}

// Input paths in configs are relative to the config file.
fs::path resolve_input(const RunContext& ctx, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : ctx.config_dir / p;
}

fs::path resolve_output(const RunContext& ctx, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : ctx.out_dir / p;
}

const json& require(const json& j, const std::string& key) {
  if (!j.contains(key)) throw std::runtime_error("config: missing key '" + key + "'");
  return j.at(key);
}

ModelSpec spec_from_config(const RunContext& ctx, const json& value) {
  if (value.is_string()) return load_spec(resolve_input(ctx, value.get<std::string>()).string());
  return spec_from_json(value);
}

// Every run records its resolved configuration and seed next to the outputs.
void write_run_config(const RunContext& ctx) {
  json resolved = ctx.config;
  resolved["command"] = ctx.command;
  resolved["resolved_seed"] = ctx.seed;
  resolved["threads"] = ctx.threads;
  resolved["config_file"] = ctx.config_path.string();
  write_text_file((ctx.out_dir / "run_config.json").string(), resolved.dump(2) + "\n");
}

std::vector<Composition> ingest_from_config(const RunContext& ctx, const json& cfg,
                                            std::vector<std::string>* species_out = nullptr,
                                            std::vector<std::string>* times_out = nullptr) {
  const std::string data_path = require(cfg, "data").get<std::string>();
  const std::string time_column = cfg.value("time_column", std::string("t"));
  std::vector<std::string> species_columns;
  if (cfg.contains("species_columns"))
    species_columns = cfg["species_columns"].get<std::vector<std::string>>();
  AbundanceTable table =
      load_csv(resolve_input(ctx, data_path).string(), time_column, species_columns);
  if (cfg.contains("reference_species"))
    table = select_reference(table, cfg["reference_species"].get<std::string>());
  ZeroStrategy strategy = ZeroStrategy::reject();
  if (cfg.contains("zero_strategy")) {
    const json& z = cfg["zero_strategy"];
    if (z.is_string() && z.get<std::string>() == "reject") {
      strategy = ZeroStrategy::reject();
    } else if (z.is_object() && z.contains("additive_epsilon")) {
      strategy = ZeroStrategy::additive(z["additive_epsilon"].get<double>());
    } else {
      throw std::runtime_error(
          "config: zero_strategy must be \"reject\" or {\"additive_epsilon\": eps}");
    }
  }
  if (species_out != nullptr) *species_out = table.species;
  if (times_out != nullptr) *times_out = table.times;
  return to_compositions(table, strategy);
}

int cmd_simulate(const RunContext& ctx) {
  const ModelSpec spec = spec_from_config(ctx, require(ctx.config, "spec"));
  const int n = require(ctx.config, "n").get<int>();
  const int burn_in = ctx.config.value("burn_in", 1000);
  Rng rng(ctx.seed);
  const auto path = simulate(spec, n, burn_in, rng);
  const std::string out_csv = ctx.config.value("out_csv", std::string("simulated.csv"));
  write_text_file(resolve_output(ctx, out_csv).string(), compositions_to_csv(path));
  write_run_config(ctx);
  log_info("wrote " + out_csv);
  return 0;
}

int cmd_fit(const RunContext& ctx) {
  std::vector<std::string> species;
  const auto data = ingest_from_config(ctx, ctx.config, &species);
  check_data_quality(data);
  const std::string family = ctx.config.value("family", std::string("dirichlet"));
  const std::string kind = ctx.config.value("kind", std::string("finite"));
  const int p = ctx.config.value("p", 1);
  std::string method = ctx.config.value("method", std::string("default"));
  if (method == "default") method = (family == "dirichlet") ? "mle" : "qmle";

  FitResult fit;
  if (family == "dirichlet" && method == "convex") {
    fit = fit_convex(data, p);
  } else if (family == "dirichlet" && method == "mle") {
    if (kind == "finite") {
      DirichletFitOptions options;
      if (ctx.config.contains("fixed_phi"))
        options.fixed_phi = ctx.config["fixed_phi"].get<double>();
      fit = fit_dirichlet_mle(data, p, options);
    } else if (kind == "od") {
      fit = fit_dirichlet_mle_od(data);
    } else {
      throw std::runtime_error("config: kind must be 'finite' or 'od'");
    }
  } else if (family == "logistic_normal" && method == "ls") {
    fit = fit_ln_ls(data, p);
  } else if (family == "logistic_normal" && method == "qmle") {
    LNQmleOptions options;
    options.joint_refine = ctx.config.value("joint_refine", false);
    if (kind == "finite")
      fit = fit_ln_qmle(data, p, options);
    else if (kind == "od")
      fit = fit_ln_qmle_od(data, options);
    else
      throw std::runtime_error("config: kind must be 'finite' or 'od'");
  } else {
    throw std::runtime_error("config: unsupported family/method '" + family + "/" + method + "'");
  }

  const int bootstrap_reps = ctx.config.value("bootstrap_reps", 0);
  if (bootstrap_reps > 0)
    fit.se = bootstrap_se(fit.spec, static_cast<int>(data.size()), bootstrap_reps, ctx.seed,
                          fit.method, ctx.threads);

  json out = fit_result_to_json(fit);
  out["species"] = species;
  out["n"] = data.size();
  const std::string out_json = ctx.config.value("out_json", std::string("fit.json"));
  write_text_file(resolve_output(ctx, out_json).string(), out.dump(2) + "\n");
  write_run_config(ctx);
  if (!fit.converged) log_warn("fit did not reach the gradient tolerance");
  for (const auto& w : fit.warnings) log_warn(w);
  return 0;
}

int cmd_forecast(const RunContext& ctx) {
  std::vector<std::string> species;
  std::vector<std::string> times;
  const auto all = ingest_from_config(ctx, ctx.config, &species, &times);
  const ModelSpec spec = spec_from_config(ctx, require(ctx.config, "spec"));
  const int history_length = ctx.config.value("history_length", static_cast<int>(all.size()));
  if (history_length < 1 || history_length > static_cast<int>(all.size()))
    throw std::runtime_error("config: history_length out of range");
  const std::vector<Composition> history(all.begin(), all.begin() + history_length);
  const int horizon = require(ctx.config, "horizon").get<int>();
  const int reps = ctx.config.value("reps", 10000);
  const double alpha = ctx.config.value("alpha", 0.05);

  const ForecastResult result =
      forecast(spec, history, horizon, reps, alpha, ctx.seed, ctx.threads);

  // table mirroring the per-species prediction layout: one row per
  // (step, species) with the realized value when the data extend that far
  std::ostringstream os;
  char lo_label[32], hi_label[32];
  std::snprintf(lo_label, sizeof(lo_label), "q%g", 100.0 * alpha / 2.0);
  std::snprintf(hi_label, sizeof(hi_label), "q%g", 100.0 * (1.0 - alpha / 2.0));
  os << "step,species,real,predicted," << lo_label << "," << hi_label << "\n";
  const int d = spec_dim(spec);
  for (int step = 0; step < horizon; ++step) {
    const int data_index = history_length + step;
    for (int i = 0; i < d; ++i) {
      os << (step + 1) << "," << species[i] << ",";
      if (data_index < static_cast<int>(all.size())) os << format_double(all[data_index][i]);
      os << "," << format_double(result.mean[step][i]) << ","
         << format_double(result.lower(step, i)) << "," << format_double(result.upper(step, i))
         << "\n";
    }
  }
  const std::string out_csv = ctx.config.value("out_csv", std::string("forecast.csv"));
  write_text_file(resolve_output(ctx, out_csv).string(), os.str());
  if (ctx.config.contains("out_json")) {
    json out = forecast_to_json(result);
    out["species"] = species;
    write_text_file(resolve_output(ctx, ctx.config["out_json"].get<std::string>()).string(),
                    out.dump(2) + "\n");
  }
  write_run_config(ctx);
  return 0;
}

int cmd_perturb(const RunContext& ctx) {
  Eigen::MatrixXd A1;
  bool log_scale_only = false;  // logistic-normal reports Delta LR
  if (ctx.config.contains("A1")) {
    const json& m = ctx.config["A1"];
    A1.resize(m.size(), m[0].size());
    for (std::size_t r = 0; r < m.size(); ++r)
      for (std::size_t c = 0; c < m[r].size(); ++c) A1(r, c) = m[r][c].get<double>();
    log_scale_only = ctx.config.value("family", std::string("dirichlet")) == "logistic_normal";
  } else {
    const ModelSpec spec = spec_from_config(ctx, require(ctx.config, "spec"));
    if (const auto* s = std::get_if<DirichletFiniteSpec>(&spec)) A1 = s->A[0];
    if (const auto* s = std::get_if<DirichletODSpec>(&spec)) A1 = s->A;
    if (const auto* s = std::get_if<LogisticNormalFiniteSpec>(&spec)) {
      A1 = s->A[0];
      log_scale_only = true;
    }
    if (const auto* s = std::get_if<LogisticNormalODSpec>(&spec)) {
      A1 = s->A;
      log_scale_only = true;
    }
  }
  const int d = static_cast<int>(A1.rows()) + 1;
  const int i = require(ctx.config, "i").get<int>() - 1;  // configs use 1-based species
  const int j = require(ctx.config, "j").get<int>() - 1;
  const double p = ctx.config.value("p", 0.1);
  const int c_grid = ctx.config.value("c_grid", 101);
  if (c_grid < 2) throw std::runtime_error("config: c_grid must be at least 2");

  const PerturbationReport report = perturbation_report(A1, i, j, p);

  std::ostringstream os;
  os << (log_scale_only ? "c,delta_lr\n" : "c,log_emr,emr\n");
  for (int g = 0; g < c_grid; ++g) {
    const double c = static_cast<double>(g) / (c_grid - 1);
    const PerturbationVector gamma = build_perturbation(d, i, j, c, p);
    const double value = delta_lr(A1, i, j, gamma);
    os << format_double(c) << "," << format_double(value);
    if (!log_scale_only) os << "," << format_double(std::exp(value));
    os << "\n";
  }
  const std::string out_csv = ctx.config.value("out_csv", std::string("perturb_sweep.csv"));
  write_text_file(resolve_output(ctx, out_csv).string(), os.str());

  json out = perturbation_report_to_json(report);
  out["measure"] = log_scale_only ? "delta_lr" : "log_emr";
  const std::string out_json = ctx.config.value("out_json", std::string("perturb.json"));
  write_text_file(resolve_output(ctx, out_json).string(), out.dump(2) + "\n");
  write_run_config(ctx);
  return 0;
}

int cmd_study(const RunContext& ctx) {
  StudyConfig config = study_config_from_json(ctx.config);
  config.master_seed = ctx.seed;
  const StudyResult result = run_rmse_study(config, ctx.threads);
  const std::string out_csv = ctx.config.value("out_csv", std::string("study.csv"));
  write_text_file(resolve_output(ctx, out_csv).string(), study_result_to_csv(result));
  if (ctx.config.contains("out_json"))
    write_text_file(resolve_output(ctx, ctx.config["out_json"].get<std::string>()).string(),
                    study_result_to_json(result).dump(2) + "\n");
  write_run_config(ctx);
  for (const auto& cell : result.cells)
    if (cell.aborted)
      throw std::runtime_error("study cell aborted (" + cell.estimator + ", n=" +
                               std::to_string(cell.n) + "): too many replicate failures");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simplexts: time series models on the probability simplex"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  int threads = 0;
  std::string out_dir;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file")->required();
    cmd->add_option("--seed", seed_override, "override the config seed");
    cmd->add_option("--threads", threads, "worker thread cap (0 = hardware)");
    cmd->add_option("--out", out_dir, "output directory (default: config directory)");
  };

  add_common(app.add_subcommand("simulate", "simulate a model spec to CSV"));
  add_common(app.add_subcommand("fit", "fit a model to abundance data"));
  add_common(app.add_subcommand("forecast", "Monte Carlo forecast with prediction intervals"));
  add_common(app.add_subcommand("perturb", "EMR / Delta-LR perturbation lines and sweeps"));
  add_common(app.add_subcommand("study", "RMSE simulation study"));

  CLI11_PARSE(app, argc, argv);

  try {
    RunContext ctx;
    ctx.command = app.get_subcommands().front()->get_name();
    ctx.config_path = fs::path(config_path);
    ctx.config = load_json_file(ctx.config_path);
    ctx.config_dir =
        ctx.config_path.has_parent_path() ? ctx.config_path.parent_path() : fs::path(".");
    ctx.out_dir = out_dir.empty() ? ctx.config_dir : fs::path(out_dir);
    fs::create_directories(ctx.out_dir);
    ctx.threads = threads;
    if (seed_override)
      ctx.seed = *seed_override;
    else if (ctx.config.contains("seed"))
      ctx.seed = ctx.config["seed"].get<std::uint64_t>();

    if (ctx.command == "simulate") return cmd_simulate(ctx);
    if (ctx.command == "fit") return cmd_fit(ctx);
    if (ctx.command == "forecast") return cmd_forecast(ctx);
    if (ctx.command == "perturb") return cmd_perturb(ctx);
    if (ctx.command == "study") return cmd_study(ctx);
    throw std::runtime_error("unknown command");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

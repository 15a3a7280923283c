#pragma once

#include <string>

#include <json.hpp>

#include "simplexts/estimation.hpp"
#include "simplexts/experiments.hpp"
#include "simplexts/forecast.hpp"
#include "simplexts/models.hpp"
#include "simplexts/perturbation.hpp"

namespace simplexts {

// Model specs as flat JSON documents; matrices are nested row arrays
// (row-major), V is given as the full SPD matrix.
//
//   {"family":"dirichlet","kind":"finite","d":3,"p":1,
//    "A0":[-1,-2],"A":[[[4,3],[3,5]]],"a0":1.5,"a":[0.7]}
//   {"family":"dirichlet","kind":"od","d":3,
//    "C":[...],"A":[[...]],"B":[[...]],"c":0.1,"a":0.5,"b":0.3}
//   {"family":"logistic_normal","kind":"finite","d":3,"p":1,
//    "A0":[...],"A":[[[...]]],"a":[0.2],"V":[[...],[...]]}
//   {"family":"logistic_normal","kind":"od","d":3,
//    "C":[...],"A":[[...]],"B":[[...]],"a":0.2,"b":0.3,"V":[[...]]}
nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

ModelSpec load_spec(const std::string& path);
void save_spec(const ModelSpec& spec, const std::string& path);

nlohmann::json fit_result_to_json(const FitResult& result);

nlohmann::json forecast_to_json(const ForecastResult& result);
/// CSV rows: step, coordinate, mean, lower, upper (floats %.17g).
std::string forecast_to_csv(const ForecastResult& result);

nlohmann::json perturbation_report_to_json(const PerturbationReport& report);

nlohmann::json study_result_to_json(const StudyResult& result);
/// Table-1-style layout: one row per (n, estimator), one column per parameter.
std::string study_result_to_csv(const StudyResult& result);

nlohmann::json study_config_to_json(const StudyConfig& config);
StudyConfig study_config_from_json(const nlohmann::json& j);

/// Time-indexed CSV of compositions: t, y1, ..., yd.
std::string compositions_to_csv(const std::vector<Composition>& data);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace simplexts

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nestedg/gformula.hpp"
#include "nestedg/simulation.hpp"

namespace nestedg {

/// Settings for `estimate` on an observed panel.
struct EstimateConfig {
  SequentialModelSpec spec = default_model_spec();
  std::optional<TreatmentRegime> regime_a;  // default: treat always
  std::optional<TreatmentRegime> regime_b;  // default: treat never
  std::size_t R = 100000;
  std::size_t B = 100;
  double level = 0.95;
  double delta0 = 0.0;
  std::vector<Estimator> estimators{Estimator::nested_g, Estimator::lin_partitioned, Estimator::li_iptw};
  bool common_random_numbers = false;
  std::optional<int> J;       // grid; inferred from the data when absent
  std::optional<double> tau;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: machine parallelism
  DgpConfig dgp;
  std::vector<StudyConfig> scenarios;  // at least one
  EstimateConfig estimate;
};

/// Parses the JSON config tree. Every key is checked against the schema;
/// unknown keys and wrong types raise InputError naming the field path.
/// `scale` multiplies study reps, R and oracle_M (never N or B).
RunConfig parse_run_config(const nlohmann::json& doc, double scale = 1.0);

/// Reads and parses a config file; `bytes` receives the raw file content.
RunConfig load_run_config(const std::string& path, double scale = 1.0, std::string* bytes = nullptr);

nlohmann::json to_json(const DgpConfig& cfg);
nlohmann::json to_json(const StudyConfig& cfg);
nlohmann::json to_json(const EstimateConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace nestedg

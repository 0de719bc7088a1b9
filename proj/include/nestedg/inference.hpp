#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nestedg/gformula.hpp"

namespace nestedg {

struct BootstrapConfig {
  std::size_t B = 100;
  std::size_t R = 100000;  // MC iterations, for the point estimate and each replicate
  std::uint64_t seed = 0;
  unsigned parallel_width = 1;
  double level = 0.95;
  double delta0 = 0.0;
  bool common_random_numbers = false;
  std::size_t chunk_size = 2048;
};

/// Throws InputError unless B >= 2, R >= 1 and level in (0, 1).
void validate_bootstrap_config(const BootstrapConfig& cfg);

struct WaldResult {
  double z = 0.0;
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// z = (delta - delta0) / se, two-sided normal p-value, CI delta +- q * se.
/// Throws InferenceError for se <= 0 (or non-finite).
WaldResult wald_test(double delta_hat, double se_hat, double delta0, double level);

/// (B - 1)^-1 sum (x_b - mean)^2. Throws InferenceError with fewer than 2 values.
double bootstrap_variance(std::span<const double> replicates);

struct EffectReport {
  double delta_hat = 0.0;
  double se_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  double level = 0.95;
  double delta0 = 0.0;
  double mu_a = 0.0;
  double mu_b = 0.0;
  double mc_se = 0.0;  // Monte-Carlo SE of the point estimate
  std::vector<double> replicates;
  std::size_t B = 0;
  std::size_t R = 0;
  std::uint64_t seed = 0;
  std::size_t redrawn_replicates = 0;
  std::map<std::string, std::size_t> failure_mix;  // error class -> count, first attempts
};

/// Nonparametric bootstrap over subjects. The point estimate comes from the
/// fit to the original cohort; replicates only feed the variance. Replicate b
/// resamples from substream b of a resampling key and integrates with keys
/// derived from (seed, b), so results do not depend on parallel_width.
EffectReport bootstrap_delta(const Cohort& cohort, const SequentialModelSpec& spec, const TreatmentRegime& regime_a,
                             const TreatmentRegime& regime_b, const BootstrapConfig& cfg);

/// Fills se/CI/z/p of `report` from its replicates.
void apply_wald(EffectReport& report);

nlohmann::json to_json(const EffectReport& report);
/// Header `delta,se,ci_low,ci_high,z,p` plus one row.
std::string to_csv(const EffectReport& report);

}  // namespace nestedg

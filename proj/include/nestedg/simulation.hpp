#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nestedg/gformula.hpp"
#include "nestedg/panel.hpp"

namespace nestedg {

enum class CensoringMechanism { none, random_p, staggered_entry, nonrandom_dropout };
std::string_view to_string(CensoringMechanism m) noexcept;
CensoringMechanism parse_censoring(std::string_view name);

/// Generating model. Defaults are the fixed simulation parameters of the
/// reference study (one normal confounder, J = 6, N = 1000).
struct DgpConfig {
  std::size_t N = 1000;
  int J = 6;

  // L_1 ~ N(alpha01, sigma2_L1); L_j ~ N(alpha0 + alpha1 L_{j-1} + alpha2 A_{j-1} + alpha3 Y_{j-1}, sigma2_L)
  double alpha01 = 0.0;
  double sigma2_L1 = 1.0;
  std::array<double, 4> alpha{-1.09, 0.5, 0.5, 0.04};
  double sigma2_L = 4.0;

  // logit P(A_1) = eta01 + eta11 L_1; logit P(A_j) = eta0 + eta1 L_{j-1} + eta2 L_j + eta3 A_{j-1} + eta4 Y_{j-1}
  std::array<double, 2> eta_baseline{0.0, 1.0};
  std::array<double, 5> eta{-1.34, 0.4, 0.6, 1.0, 0.04};

  // mu_1 = b01 + b11 L_1 + b12 A_1; mu_j = b0 + b1 L_{j-1} + b2 L_j + b3 A_{j-1} + b4 A_j + b5 Y_{j-1}
  std::array<double, 3> beta_baseline{20.0, 1.0, 2.0};
  std::array<double, 6> beta{10.65, 0.2, 0.4, 0.2, 0.4, 0.05};
  // Cost family is chosen by the current treatment A_j.
  Family family_control = Family::normal;
  Family family_treated = Family::normal;
  double sigma2_Y = 2.0;       // normal variance
  double gamma_shape = 8.0;    // gamma: variance mu^2 / shape
  double ig_lambda = 40.0;     // inverse Gaussian: variance mu^3 / lambda

  // logit P(D_1) = g01 + g11 L_1 + g21 Y_1; logit P(D_j) = g0 + g1 L_{j-1} + g2 L_j + g3 Y_j
  std::array<double, 3> gamma_baseline{-5.0, 0.3, 0.05};
  std::array<double, 4> gamma{-3.0, 0.1, 0.2, 0.03};

  // Censoring at the start of intervals j >= 2.
  CensoringMechanism censoring = CensoringMechanism::none;
  double censor_p = 0.05;                                  // random_p
  std::array<double, 3> staggered{-3.3, 0.25, 0.5};        // on (1, L_1, A_1)
  std::array<double, 4> dropout{-3.5, 0.25, 0.5, 0.01};    // on (1, L_j, A_j, Y_j)

  std::uint64_t seed = 0;
  int max_redraws = 100;
};

/// Throws InputError for out-of-range sizes, variances or families.
void validate_dgp(const DgpConfig& cfg);

/// Complete null: treatment enters no structural equation for L, Y (b12 = b3 = b4 = alpha2 = 0).
DgpConfig null_dgp(DgpConfig cfg);

/// Simulates a cohort in (C, L, A, Y, D) order. For nonrandom dropout the
/// interval's variables are drawn first and censoring is then applied to the
/// start of that interval. Subject i draws from substream i of the cohort key,
/// so the result does not depend on `threads`.
Cohort generate_cohort(const DgpConfig& cfg, unsigned threads = 1);

struct OracleResult {
  double mu = 0.0;
  double mc_se = 0.0;
  std::size_t M = 0;
};

/// Mean cumulative cost of M uncensored potential-outcome paths under the
/// generating parameters with treatment fixed at `regime`.
OracleResult true_values_oracle(const DgpConfig& cfg, const TreatmentRegime& regime, std::size_t M,
                                unsigned threads = 1);

// ---------------------------------------------------------------------------
// Studies

enum class Estimator { nested_g, lin_partitioned, li_iptw, lin_complete_case };
std::string_view to_string(Estimator e) noexcept;
Estimator parse_estimator(std::string_view name);

struct StudyConfig {
  std::string scenario = "study";
  DgpConfig dgp;
  std::size_t reps = 200;
  std::vector<Estimator> estimators{Estimator::nested_g};
  /// Cost families fitted by nested_g on each dataset; empty means the
  /// control-arm generating family.
  std::vector<Family> fit_families;
  std::size_t R = 100000;
  std::size_t B = 100;  // 0 skips the bootstrap: estimates only
  std::optional<TreatmentRegime> regime_a;  // default: treat always
  std::optional<TreatmentRegime> regime_b;  // default: treat never
  std::optional<double> true_delta;         // fixed truth; otherwise the oracle
  std::size_t oracle_M = 10000000;
  double level = 0.95;
  unsigned threads = 1;
  std::uint64_t seed = 0;
  bool common_random_numbers = false;
  double max_failure_fraction = 0.10;
};

void validate_study(const StudyConfig& cfg);

struct RepRecord {
  std::size_t rep = 0;
  std::string estimator;
  std::string fit_family;  // empty for the inverse-weighted estimators
  bool ok = false;
  std::string error;
  double estimate = 0.0;
  double se = 0.0;  // NaN without a bootstrap
  double mu_a = 0.0;
  double mu_b = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 0.0;
};

struct StudyRow {
  std::string scenario;
  std::string estimator;
  std::string fit_family;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  double true_delta = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double pct_bias = 0.0;  // 100 |bias| / |true_delta|
  double mcse = 0.0;      // SD of estimates over reps
  double mean_se_hat = 0.0;
  double coverage = 0.0;
  double rejection_rate = 0.0;
  double mean_mu_a = 0.0;
  double mean_mu_b = 0.0;
};

struct StudyResult {
  double true_mu_a = 0.0;
  double true_mu_b = 0.0;
  double true_delta = 0.0;
  std::vector<StudyRow> rows;
  std::vector<RepRecord> reps;
};

/// Runs every repetition (rep seeds derived from (seed, rep)) and aggregates
/// one row per (estimator, fit family). Throws StudyError when an estimator
/// fails in more than max_failure_fraction of reps.
StudyResult run_study(const StudyConfig& cfg);

/// Fraction of nested_g reps (first fit family) with p < 1 - level.
double run_level_study(const StudyConfig& cfg);

std::string study_summary_csv(const std::vector<StudyRow>& rows);
std::string study_reps_csv(const std::string& scenario, const std::vector<RepRecord>& reps);

}  // namespace nestedg

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nestedg/glm.hpp"
#include "nestedg/panel.hpp"

namespace nestedg {

// Design terms available to the sequential models. Under the Markov
// restriction a model sees the current interval and the one before it.
enum class Term { intercept, l_prev, a_prev, y_prev, l, a, y };

/// Accepts "1", "L_prev", "A_prev", "Y_prev", "L", "A", "Y".
Term parse_term(std::string_view name);
std::string_view to_string(Term t) noexcept;

/// Values visible when building one design row; `l_prev`/`l` have the
/// confounder dimension (empty at baseline for l_prev).
struct RowContext {
  std::span<const double> l_prev;
  double a_prev = 0.0;
  double y_prev = 0.0;
  std::span<const double> l;
  double a = 0.0;
  double y = 0.0;
};

/// Compiled predictor list: term sequence plus expanded column count.
class DesignTerms {
 public:
  DesignTerms() = default;
  DesignTerms(const std::vector<std::string>& names, int confounder_dim);

  int columns() const noexcept { return columns_; }
  const std::vector<Term>& terms() const noexcept { return terms_; }
  bool uses(Term t) const noexcept;
  void fill(const RowContext& ctx, double* out) const noexcept;

 private:
  std::vector<Term> terms_;
  int confounder_dim_ = 1;
  int columns_ = 0;
};

/// Model structure for the confounder, cost and death models at baseline and
/// follow-up. Confounder components are modelled one GLM each, conditionally
/// independent given the past.
struct SequentialModelSpec {
  struct Triple {
    GlmSpec confounder;
    GlmSpec cost;
    GlmSpec death;
  };
  bool markov = true;
  Triple baseline;
  Triple followup;
};

/// Default predictor sets: L_1 ~ 1; Y_1 ~ 1 + L + A; D_1 ~ 1 + L + Y;
/// L_j ~ 1 + L_prev + A_prev + Y_prev; Y_j ~ 1 + L_prev + L + A_prev + A + Y_prev;
/// D_j ~ 1 + L_prev + L + Y.
SequentialModelSpec default_model_spec(Family cost_family = Family::normal);

/// Throws InputError if a predictor is unknown or not yet observed at the
/// model's position in the (C, L, A, Y, D) ordering.
void validate_model_spec(const SequentialModelSpec& spec);

struct ModelTriple {
  std::vector<FittedGlm> confounder;  // one per confounder component
  FittedGlm cost;
  FittedGlm death;
};

struct SequentialModelSet {
  SequentialModelSpec spec;
  int J = 1;
  int confounder_dim = 1;
  ModelTriple theta1;
  std::optional<ModelTriple> theta;  // absent when J == 1
  std::size_t n_baseline_obs = 0;
  std::size_t n_followup_obs = 0;
};

/// Fixed intervention a_1..a_J.
struct TreatmentRegime {
  std::vector<int> assignments;

  static TreatmentRegime constant(int J, int value) { return {std::vector<int>(static_cast<std::size_t>(J), value)}; }
};

void validate_regime(const TreatmentRegime& regime, int J);

/// Fits the six sequential models by pooled (partial) likelihood. Baseline
/// models use interval-1 rows; follow-up models pool rows j >= 2 that are
/// uncensored through j with D_{j-1} = 0. `subjects` selects (possibly
/// repeated) subject indices; empty means the whole cohort.
SequentialModelSet fit_sequential_models(const Cohort& cohort, const SequentialModelSpec& spec,
                                         std::span<const std::size_t> subjects = {});

struct GComputeOptions {
  unsigned threads = 1;
  std::size_t chunk_size = 2048;   // fixed work unit; results do not depend on thread count
  int max_redraws = 100;           // per interval, for non-positive cost means
  double max_abort_fraction = 1e-3;
};

struct GComputeResult {
  double mu_hat = 0.0;
  double mc_se = 0.0;
  std::vector<double> interval_means;  // per-interval mean cost from the same draws
  std::size_t paths = 0;               // completed paths
  std::size_t aborted = 0;
  std::size_t redraws = 0;
};

/// One simulated path under a regime.
struct SimulatedPath {
  std::vector<double> l;  // J * confounder_dim, row-major by interval
  std::vector<double> y;  // J
  std::vector<int> d;     // J
  bool aborted = false;
  int redraws = 0;
};

/// Draws one path of Monte-Carlo integration for the nested g-formula.
void simulate_path(const SequentialModelSet& models, const TreatmentRegime& regime, RandomStream& rng,
                   SimulatedPath& path, int max_redraws = 100);

/// Monte-Carlo estimate of E[sum_j Y_j^a] from R paths; path r draws from
/// substream (stream_key, r).
GComputeResult g_compute_mean(const SequentialModelSet& models, const TreatmentRegime& regime, std::size_t R,
                              std::uint64_t stream_key, const GComputeOptions& options = {});

struct DeltaEstimate {
  double delta = 0.0;
  double mc_se = 0.0;
  GComputeResult mu_a;
  GComputeResult mu_b;
};

struct DeltaOptions {
  GComputeOptions gcompute;
  bool common_random_numbers = false;
};

/// mu_a - mu_b, each from its own substream of `seed` (or a shared one when
/// common random numbers are requested).
DeltaEstimate estimate_delta(const SequentialModelSet& models, const TreatmentRegime& regime_a,
                             const TreatmentRegime& regime_b, std::size_t R, std::uint64_t seed,
                             const DeltaOptions& options = {});

nlohmann::json to_json(const SequentialModelSet& models);
nlohmann::json to_json(const DeltaEstimate& estimate);

}  // namespace nestedg

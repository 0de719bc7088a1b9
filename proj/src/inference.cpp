#include "nestedg/inference.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <optional>
#include <sstream>

#include "nestedg/format.hpp"
#include "nestedg/parallel.hpp"

namespace nestedg {

void validate_bootstrap_config(const BootstrapConfig& cfg) {
  if (cfg.B < 2) throw InputError("bootstrap replicate count B must be >= 2");
  if (cfg.R < 1) throw InputError("Monte-Carlo iteration count R must be >= 1");
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw InputError("confidence level must lie in (0, 1)");
}

WaldResult wald_test(double delta_hat, double se_hat, double delta0, double level) {
  if (!(se_hat > 0.0) || !std::isfinite(se_hat))
    throw InferenceError("degenerate inference: standard error is " + format_double(se_hat));
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0, 1)");
  const double q = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
  WaldResult w;
  w.z = (delta_hat - delta0) / se_hat;
  w.p_value = std::erfc(std::abs(w.z) / std::sqrt(2.0));
  w.ci_low = delta_hat - q * se_hat;
  w.ci_high = delta_hat + q * se_hat;
  return w;
}

double bootstrap_variance(std::span<const double> replicates) {
  if (replicates.size() < 2) throw InferenceError("bootstrap variance needs at least 2 replicates");
  double mean = 0.0;
  for (double x : replicates) mean += x;
  mean /= static_cast<double>(replicates.size());
  double ss = 0.0;
  for (double x : replicates) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(replicates.size() - 1);
}

void apply_wald(EffectReport& report) {
  report.se_hat = std::sqrt(bootstrap_variance(report.replicates));
  const WaldResult w = wald_test(report.delta_hat, report.se_hat, report.delta0, report.level);
  report.z = w.z;
  report.p_value = w.p_value;
  report.ci_low = w.ci_low;
  report.ci_high = w.ci_high;
}

namespace {

struct ReplicateOutcome {
  std::optional<double> delta;
  std::string first_failure;  // error class of the first attempt, if it failed
  bool redrawn = false;
};

double run_replicate(const Cohort& cohort, const SequentialModelSpec& spec, const TreatmentRegime& a,
                     const TreatmentRegime& b, const BootstrapConfig& cfg, std::size_t rep, std::uint64_t attempt) {
  const std::size_t n = cohort.subjects.size();
  RandomStream rng(derive_key(cfg.seed, {stream_tag::kResample, attempt}), rep);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
  const SequentialModelSet models = fit_sequential_models(cohort, spec, idx);
  DeltaOptions opt;
  opt.common_random_numbers = cfg.common_random_numbers;
  opt.gcompute.threads = 1;
  opt.gcompute.chunk_size = cfg.chunk_size;
  const std::uint64_t mc_seed = derive_key(cfg.seed, {stream_tag::kReplicate, rep, attempt});
  return estimate_delta(models, a, b, cfg.R, mc_seed, opt).delta;
}

}  // namespace

EffectReport bootstrap_delta(const Cohort& cohort, const SequentialModelSpec& spec, const TreatmentRegime& regime_a,
                             const TreatmentRegime& regime_b, const BootstrapConfig& cfg) {
  validate_bootstrap_config(cfg);
  if (cohort.subjects.empty()) throw InputError("no subjects");

  EffectReport report;
  report.level = cfg.level;
  report.delta0 = cfg.delta0;
  report.B = cfg.B;
  report.R = cfg.R;
  report.seed = cfg.seed;

  {
    const SequentialModelSet models = fit_sequential_models(cohort, spec);
    DeltaOptions opt;
    opt.common_random_numbers = cfg.common_random_numbers;
    opt.gcompute.threads = cfg.parallel_width;
    opt.gcompute.chunk_size = cfg.chunk_size;
    const DeltaEstimate est = estimate_delta(models, regime_a, regime_b, cfg.R, cfg.seed, opt);
    report.delta_hat = est.delta;
    report.mu_a = est.mu_a.mu_hat;
    report.mu_b = est.mu_b.mu_hat;
    report.mc_se = est.mc_se;
  }

  std::vector<ReplicateOutcome> outcomes(cfg.B);
  parallel_for(cfg.B, cfg.parallel_width, [&](std::size_t b) {
    ReplicateOutcome& out = outcomes[b];
    for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
      try {
        out.delta = run_replicate(cohort, spec, regime_a, regime_b, cfg, b, attempt);
        return;
      } catch (const ModelError& e) {
        if (attempt == 0) {
          out.first_failure = e.class_name();
          out.redrawn = true;
        }
      }
    }
  });

  std::size_t failures = 0;
  for (const auto& o : outcomes) {
    if (!o.first_failure.empty()) {
      ++failures;
      ++report.failure_mix[o.first_failure];
    }
    if (o.redrawn) ++report.redrawn_replicates;
    if (o.delta) report.replicates.push_back(*o.delta);
  }
  auto mix = [&] {
    std::string s;
    for (const auto& [name, count] : report.failure_mix) s += (s.empty() ? "" : ", ") + name + " x" + std::to_string(count);
    return s;
  };
  if (static_cast<double>(failures) > 0.05 * static_cast<double>(cfg.B))
    throw InferenceError(std::to_string(failures) + " of " + std::to_string(cfg.B) +
                         " bootstrap replicates failed to refit (" + mix() + ")");
  if (report.replicates.size() < 2)
    throw InferenceError("fewer than 2 bootstrap replicates succeeded (" + mix() + ")");
  apply_wald(report);
  return report;
}

nlohmann::json to_json(const EffectReport& r) {
  return {{"delta_hat", r.delta_hat},
          {"se_hat", r.se_hat},
          {"ci_low", r.ci_low},
          {"ci_high", r.ci_high},
          {"level", r.level},
          {"z", r.z},
          {"p_value", r.p_value},
          {"delta0", r.delta0},
          {"mu_a", r.mu_a},
          {"mu_b", r.mu_b},
          {"mc_se", r.mc_se},
          {"B", r.B},
          {"R", r.R},
          {"seed", r.seed},
          {"redrawn_replicates", r.redrawn_replicates},
          {"failure_mix", r.failure_mix},
          {"replicates", r.replicates}};
}

std::string to_csv(const EffectReport& r) {
  std::ostringstream out;
  out << "delta,se,ci_low,ci_high,z,p\n"
      << format_double(r.delta_hat) << ',' << format_double(r.se_hat) << ',' << format_double(r.ci_low) << ','
      << format_double(r.ci_high) << ',' << format_double(r.z) << ',' << format_double(r.p_value) << '\n';
  return out.str();
}

}  // namespace nestedg

#include "nestedg/simulation.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "nestedg/comparators.hpp"
#include "nestedg/format.hpp"
#include "nestedg/inference.hpp"
#include "nestedg/parallel.hpp"

namespace nestedg {

std::string_view to_string(CensoringMechanism m) noexcept {
  switch (m) {
    case CensoringMechanism::none: return "none";
    case CensoringMechanism::random_p: return "random_p";
    case CensoringMechanism::staggered_entry: return "staggered_entry";
    case CensoringMechanism::nonrandom_dropout: return "nonrandom_dropout";
  }
  return "?";
}

CensoringMechanism parse_censoring(std::string_view name) {
  for (auto m : {CensoringMechanism::none, CensoringMechanism::random_p, CensoringMechanism::staggered_entry,
                 CensoringMechanism::nonrandom_dropout})
    if (name == to_string(m)) return m;
  throw InputError("unknown censoring mechanism '" + std::string(name) +
                   "' (expected none, random_p, staggered_entry, nonrandom_dropout)");
}

void validate_dgp(const DgpConfig& cfg) {
  if (cfg.N < 1) throw InputError("N must be >= 1");
  if (cfg.J < 1) throw InputError("J must be >= 1");
  if (!(cfg.sigma2_L1 > 0.0) || !(cfg.sigma2_L > 0.0)) throw InputError("confounder variances must be positive");
  if (!(cfg.sigma2_Y > 0.0)) throw InputError("sigma2_Y must be positive");
  if (!(cfg.gamma_shape > 0.0)) throw InputError("gamma_shape must be positive");
  if (!(cfg.ig_lambda > 0.0)) throw InputError("ig_lambda must be positive");
  if (!(cfg.censor_p >= 0.0 && cfg.censor_p < 1.0)) throw InputError("censor_p must lie in [0, 1)");
  for (Family f : {cfg.family_control, cfg.family_treated})
    if (f == Family::bernoulli) throw InputError("cost family must be normal, gamma or inverse_gaussian");
  if (cfg.max_redraws < 0) throw InputError("max_redraws must be >= 0");
}

DgpConfig null_dgp(DgpConfig cfg) {
  cfg.beta_baseline[2] = 0.0;
  cfg.beta[3] = 0.0;
  cfg.beta[4] = 0.0;
  cfg.alpha[2] = 0.0;
  return cfg;
}

namespace {

double draw_cost(const DgpConfig& cfg, int a, double mu, RandomStream& rng) {
  switch (a == 1 ? cfg.family_treated : cfg.family_control) {
    case Family::normal: return draw_normal(rng, mu, cfg.sigma2_Y);
    case Family::gamma: return draw_gamma(rng, mu, 1.0 / cfg.gamma_shape);
    case Family::inverse_gaussian: return draw_inverse_gaussian(rng, mu, cfg.ig_lambda);
    case Family::bernoulli: break;
  }
  return mu;
}

bool needs_positive_mean(const DgpConfig& cfg, int a) {
  return (a == 1 ? cfg.family_treated : cfg.family_control) != Family::normal;
}

// Simulates one subject. With `forced` set, treatment follows the regime and
// censoring is skipped. Appends records to `out` when given; returns the
// cumulative cost over the uncensored follow-up.
double simulate_subject(const DgpConfig& cfg, RandomStream& rng, const TreatmentRegime* forced, SubjectPanel* out) {
  double l_prev = 0.0, y_prev = 0.0, l1 = 0.0;
  int a_prev = 0, a1 = 0;
  double total = 0.0;
  for (int j = 1; j <= cfg.J; ++j) {
    double l = 0.0, mu = 0.0;
    int a = 0;
    for (int attempt = 0;; ++attempt) {
      if (j == 1) {
        l = draw_normal(rng, cfg.alpha01, cfg.sigma2_L1);
        a = forced ? forced->assignments[0] : draw_bernoulli(rng, expit(cfg.eta_baseline[0] + cfg.eta_baseline[1] * l));
        mu = cfg.beta_baseline[0] + cfg.beta_baseline[1] * l + cfg.beta_baseline[2] * a;
      } else {
        const auto& al = cfg.alpha;
        l = draw_normal(rng, al[0] + al[1] * l_prev + al[2] * a_prev + al[3] * y_prev, cfg.sigma2_L);
        const auto& e = cfg.eta;
        a = forced ? forced->assignments[static_cast<std::size_t>(j - 1)]
                   : draw_bernoulli(rng, expit(e[0] + e[1] * l_prev + e[2] * l + e[3] * a_prev + e[4] * y_prev));
        const auto& b = cfg.beta;
        mu = b[0] + b[1] * l_prev + b[2] * l + b[3] * a_prev + b[4] * a + b[5] * y_prev;
      }
      if (mu > 0.0 || !needs_positive_mean(cfg, a)) break;
      if (attempt >= cfg.max_redraws)
        throw DomainError("cost mean stayed non-positive after " + std::to_string(cfg.max_redraws) +
                          " redraws in interval " + std::to_string(j));
    }
    const double y = draw_cost(cfg, a, mu, rng);
    const double eta_d = j == 1 ? cfg.gamma_baseline[0] + cfg.gamma_baseline[1] * l + cfg.gamma_baseline[2] * y
                                : cfg.gamma[0] + cfg.gamma[1] * l_prev + cfg.gamma[2] * l + cfg.gamma[3] * y;
    const int d = draw_bernoulli(rng, expit(eta_d)) ? 1 : 0;
    if (j == 1) {
      l1 = l;
      a1 = a;
    }

    if (j >= 2) {
      // One uniform per interval whatever the mechanism, so mechanisms share
      // the underlying draws.
      const double u = rng.uniform();
      double pc = 0.0;
      if (!forced) {
        switch (cfg.censoring) {
          case CensoringMechanism::none: break;
          case CensoringMechanism::random_p: pc = cfg.censor_p; break;
          case CensoringMechanism::staggered_entry:
            pc = expit(cfg.staggered[0] + cfg.staggered[1] * l1 + cfg.staggered[2] * a1);
            break;
          case CensoringMechanism::nonrandom_dropout:
            pc = expit(cfg.dropout[0] + cfg.dropout[1] * l + cfg.dropout[2] * a + cfg.dropout[3] * y);
            break;
        }
      }
      if (u < pc) {
        if (out) out->records.push_back(IntervalRecord{1, {}, std::nullopt, std::nullopt, std::nullopt});
        return total;
      }
    }

    total += y;
    if (out) out->records.push_back(IntervalRecord{0, {l}, a, y, d});
    if (d == 1) {
      if (out)
        for (int k = j + 1; k <= cfg.J; ++k)
          out->records.push_back(IntervalRecord{0, {}, std::nullopt, 0.0, 1});
      return total;
    }
    l_prev = l;
    a_prev = a;
    y_prev = y;
  }
  return total;
}

std::uint64_t regime_code(const TreatmentRegime& r) {
  std::uint64_t code = mix64(r.assignments.size());
  for (int a : r.assignments) code = mix64(code ^ static_cast<std::uint64_t>(a + 1));
  return code;
}

}  // namespace

Cohort generate_cohort(const DgpConfig& cfg, unsigned threads) {
  validate_dgp(cfg);
  Cohort cohort;
  cohort.grid = make_grid(cfg.J, static_cast<double>(cfg.J));
  cohort.confounder_dim = 1;
  cohort.subjects.resize(cfg.N);
  const std::uint64_t key = derive_key(cfg.seed, {stream_tag::kCohort});
  parallel_for(cfg.N, threads, [&](std::size_t i) {
    RandomStream rng(key, i);
    SubjectPanel& s = cohort.subjects[i];
    s.id = std::to_string(i + 1);
    s.records.reserve(static_cast<std::size_t>(cfg.J));
    try {
      simulate_subject(cfg, rng, nullptr, &s);
    } catch (const DomainError& e) {
      throw DomainError("cohort generation, subject " + s.id + ": " + e.what());
    }
  });
  return cohort;
}

OracleResult true_values_oracle(const DgpConfig& cfg, const TreatmentRegime& regime, std::size_t M, unsigned threads) {
  validate_dgp(cfg);
  validate_regime(regime, cfg.J);
  if (M < 1) throw InputError("oracle path count M must be >= 1");
  const std::uint64_t key = derive_key(cfg.seed, {stream_tag::kOracle, regime_code(regime)});
  constexpr std::size_t chunk = 4096;
  const std::size_t n_chunks = (M + chunk - 1) / chunk;
  struct Stats {
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
  };
  std::vector<Stats> stats(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    Stats& st = stats[c];
    const std::size_t end = std::min(M, (c + 1) * chunk);
    for (std::size_t r = c * chunk; r < end; ++r) {
      RandomStream rng(key, r);
      const double total = simulate_subject(cfg, rng, &regime, nullptr);
      ++st.n;
      const double d = total - st.mean;
      st.mean += d / static_cast<double>(st.n);
      st.m2 += d * (total - st.mean);
    }
  });
  Stats all;
  for (const auto& st : stats) {
    const std::size_t n = all.n + st.n;
    const double d = st.mean - all.mean;
    all.mean += d * static_cast<double>(st.n) / static_cast<double>(n);
    all.m2 += st.m2 + d * d * static_cast<double>(all.n) * static_cast<double>(st.n) / static_cast<double>(n);
    all.n = n;
  }
  OracleResult out;
  out.M = M;
  out.mu = all.mean;
  out.mc_se = M > 1 ? std::sqrt(all.m2 / static_cast<double>(M - 1) / static_cast<double>(M)) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Studies

std::string_view to_string(Estimator e) noexcept {
  switch (e) {
    case Estimator::nested_g: return "nested_g";
    case Estimator::lin_partitioned: return "lin_partitioned";
    case Estimator::li_iptw: return "li_iptw";
    case Estimator::lin_complete_case: return "lin_complete_case";
  }
  return "?";
}

Estimator parse_estimator(std::string_view name) {
  for (auto e : {Estimator::nested_g, Estimator::lin_partitioned, Estimator::li_iptw, Estimator::lin_complete_case})
    if (name == to_string(e)) return e;
  throw InputError("unknown estimator '" + std::string(name) +
                   "' (expected nested_g, lin_partitioned, li_iptw, lin_complete_case)");
}

void validate_study(const StudyConfig& cfg) {
  validate_dgp(cfg.dgp);
  if (cfg.reps < 1) throw InputError("reps must be >= 1");
  if (cfg.estimators.empty()) throw InputError("estimators must not be empty");
  if (cfg.R < 1) throw InputError("R must be >= 1");
  if (cfg.B == 1) throw InputError("B must be 0 (no bootstrap) or >= 2");
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw InputError("level must lie in (0, 1)");
  if (!cfg.true_delta && cfg.oracle_M < 1) throw InputError("oracle_M must be >= 1");
  for (Family f : cfg.fit_families)
    if (f == Family::bernoulli) throw InputError("fit_families must be normal, gamma or inverse_gaussian");
  if (cfg.regime_a) validate_regime(*cfg.regime_a, cfg.dgp.J);
  if (cfg.regime_b) validate_regime(*cfg.regime_b, cfg.dgp.J);
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

RepRecord failed(std::size_t rep, Estimator e, std::string family, const Error& err) {
  RepRecord r;
  r.rep = rep;
  r.estimator = std::string(to_string(e));
  r.fit_family = std::move(family);
  r.error = std::string(err.class_name()) + ": " + err.what();
  return r;
}

std::vector<RepRecord> run_rep(const StudyConfig& cfg, const std::vector<Family>& families, const TreatmentRegime& ra,
                               const TreatmentRegime& rb, std::size_t rep) {
  const std::uint64_t rep_seed = derive_key(cfg.seed, {stream_tag::kStudyRep, rep});
  DgpConfig dgp = cfg.dgp;
  dgp.seed = rep_seed;
  const Cohort cohort = generate_cohort(dgp);
  std::vector<RepRecord> out;

  for (Estimator e : cfg.estimators) {
    if (e == Estimator::nested_g) {
      for (Family f : families) {
        const std::string fam(to_string(f));
        try {
          const auto spec = default_model_spec(f);
          RepRecord r;
          r.rep = rep;
          r.estimator = "nested_g";
          r.fit_family = fam;
          if (cfg.B >= 2) {
            BootstrapConfig bc;
            bc.B = cfg.B;
            bc.R = cfg.R;
            bc.seed = rep_seed;
            bc.level = cfg.level;
            bc.common_random_numbers = cfg.common_random_numbers;
            const EffectReport rpt = bootstrap_delta(cohort, spec, ra, rb, bc);
            r.estimate = rpt.delta_hat;
            r.se = rpt.se_hat;
            r.mu_a = rpt.mu_a;
            r.mu_b = rpt.mu_b;
            r.ci_low = rpt.ci_low;
            r.ci_high = rpt.ci_high;
            r.p_value = rpt.p_value;
          } else {
            const auto models = fit_sequential_models(cohort, spec);
            DeltaOptions opt;
            opt.common_random_numbers = cfg.common_random_numbers;
            const auto est = estimate_delta(models, ra, rb, cfg.R, rep_seed, opt);
            r.estimate = est.delta;
            r.mu_a = est.mu_a.mu_hat;
            r.mu_b = est.mu_b.mu_hat;
            r.se = r.ci_low = r.ci_high = r.p_value = kNaN;
          }
          r.ok = true;
          out.push_back(std::move(r));
        } catch (const Error& err) {
          out.push_back(failed(rep, e, fam, err));
        }
      }
      continue;
    }
    try {
      const Eigen::MatrixXd W = baseline_design(cohort);
      IttEstimate itt;
      if (e == Estimator::lin_partitioned) itt = partitioned_ipcw(cohort, W);
      else if (e == Estimator::lin_complete_case) itt = ipcw_complete_case(cohort, W);
      else itt = iptw_partitioned(cohort, W, fit_propensity(cohort));
      RepRecord r;
      r.rep = rep;
      r.estimator = std::string(to_string(e));
      r.ok = true;
      r.estimate = itt.delta_itt;
      r.se = r.mu_a = r.mu_b = r.ci_low = r.ci_high = r.p_value = kNaN;
      out.push_back(std::move(r));
    } catch (const Error& err) {
      out.push_back(failed(rep, e, "", err));
    }
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

StudyResult run_study(const StudyConfig& cfg) {
  validate_study(cfg);
  const int J = cfg.dgp.J;
  const TreatmentRegime ra = cfg.regime_a.value_or(TreatmentRegime::constant(J, 1));
  const TreatmentRegime rb = cfg.regime_b.value_or(TreatmentRegime::constant(J, 0));
  std::vector<Family> families = cfg.fit_families;
  if (families.empty()) families.push_back(cfg.dgp.family_control);

  StudyResult result;
  if (cfg.true_delta) {
    result.true_delta = *cfg.true_delta;
    result.true_mu_a = result.true_mu_b = kNaN;
  } else {
    DgpConfig oracle_cfg = cfg.dgp;
    oracle_cfg.seed = derive_key(cfg.seed, {stream_tag::kOracle});
    result.true_mu_a = true_values_oracle(oracle_cfg, ra, cfg.oracle_M, cfg.threads).mu;
    result.true_mu_b = true_values_oracle(oracle_cfg, rb, cfg.oracle_M, cfg.threads).mu;
    result.true_delta = result.true_mu_a - result.true_mu_b;
  }

  std::vector<std::vector<RepRecord>> per_rep(cfg.reps);
  parallel_for(cfg.reps, cfg.threads, [&](std::size_t rep) {
    try {
      per_rep[rep] = run_rep(cfg, families, ra, rb, rep);
    } catch (const Error& err) {
      // Generation failed: every estimator fails for this rep.
      for (Estimator e : cfg.estimators) {
        if (e == Estimator::nested_g)
          for (Family f : families) per_rep[rep].push_back(failed(rep, e, std::string(to_string(f)), err));
        else
          per_rep[rep].push_back(failed(rep, e, "", err));
      }
    }
  });
  for (auto& v : per_rep)
    for (auto& r : v) result.reps.push_back(std::move(r));

  const double alpha = 1.0 - cfg.level;
  for (Estimator e : cfg.estimators) {
    const bool nested = e == Estimator::nested_g;
    const std::vector<std::string> fams = [&] {
      std::vector<std::string> f;
      if (nested)
        for (Family fam : families) f.emplace_back(to_string(fam));
      else
        f.emplace_back();
      return f;
    }();
    for (const auto& fam : fams) {
      StudyRow row;
      row.scenario = cfg.scenario;
      row.estimator = std::string(to_string(e));
      row.fit_family = fam;
      row.true_delta = result.true_delta;
      std::vector<double> est, se, mua, mub;
      std::size_t covered = 0, rejected = 0;
      std::string first_error;
      for (const auto& r : result.reps) {
        if (r.estimator != row.estimator || r.fit_family != fam) continue;
        if (!r.ok) {
          ++row.n_failed;
          if (first_error.empty()) first_error = r.error;
          continue;
        }
        ++row.n_ok;
        est.push_back(r.estimate);
        mua.push_back(r.mu_a);
        mub.push_back(r.mu_b);
        if (!std::isnan(r.se)) {
          se.push_back(r.se);
          covered += (r.ci_low <= result.true_delta && result.true_delta <= r.ci_high) ? 1 : 0;
          rejected += r.p_value < alpha ? 1 : 0;
        }
      }
      if (static_cast<double>(row.n_failed) > cfg.max_failure_fraction * static_cast<double>(cfg.reps))
        throw StudyError(row.estimator + (fam.empty() ? "" : " (" + fam + ")") + " failed in " +
                         std::to_string(row.n_failed) + " of " + std::to_string(cfg.reps) + " reps; first: " +
                         first_error);
      row.mean_estimate = mean_of(est);
      row.bias = row.mean_estimate - result.true_delta;
      row.pct_bias = 100.0 * std::abs(row.bias) / std::abs(result.true_delta);
      row.mcse = sd_of(est);
      row.mean_se_hat = mean_of(se);
      row.coverage = se.empty() ? kNaN : static_cast<double>(covered) / static_cast<double>(se.size());
      row.rejection_rate = se.empty() ? kNaN : static_cast<double>(rejected) / static_cast<double>(se.size());
      row.mean_mu_a = mean_of(mua);
      row.mean_mu_b = mean_of(mub);
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

double run_level_study(const StudyConfig& cfg) {
  StudyConfig c = cfg;
  c.estimators = {Estimator::nested_g};
  if (c.fit_families.size() > 1) c.fit_families.resize(1);
  if (!c.true_delta) c.true_delta = 0.0;
  if (c.B < 2) throw InputError("a level study needs a bootstrap (B >= 2)");
  const StudyResult r = run_study(c);
  return r.rows.front().rejection_rate;
}

namespace {

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

}  // namespace

std::string study_summary_csv(const std::vector<StudyRow>& rows) {
  std::ostringstream out;
  out << "scenario,estimator,fit_family,n_ok,n_failed,true_delta,mean_estimate,bias,pct_bias,mcse,mean_se_hat,"
         "coverage,rejection_rate,mean_mu_a,mean_mu_b\n";
  for (const auto& r : rows) {
    out << csv_text(r.scenario) << ',' << r.estimator << ',' << r.fit_family << ',' << r.n_ok << ',' << r.n_failed
        << ',' << format_double(r.true_delta) << ',' << format_double(r.mean_estimate) << ','
        << format_double(r.bias) << ',' << format_double(r.pct_bias) << ',' << format_double(r.mcse) << ','
        << format_double(r.mean_se_hat) << ',' << format_double(r.coverage) << ','
        << format_double(r.rejection_rate) << ',' << format_double(r.mean_mu_a) << ','
        << format_double(r.mean_mu_b) << '\n';
  }
  return out.str();
}

std::string study_reps_csv(const std::string& scenario, const std::vector<RepRecord>& reps) {
  std::ostringstream out;
  out << "scenario,rep,estimator,fit_family,ok,estimate,se,mu_a,mu_b,ci_low,ci_high,p_value,error\n";
  for (const auto& r : reps) {
    out << csv_text(scenario) << ',' << r.rep << ',' << r.estimator << ',' << r.fit_family << ',' << (r.ok ? 1 : 0)
        << ',';
    if (r.ok) {
      out << format_double(r.estimate) << ',' << format_double(r.se) << ',' << format_double(r.mu_a) << ','
          << format_double(r.mu_b) << ',' << format_double(r.ci_low) << ',' << format_double(r.ci_high) << ','
          << format_double(r.p_value) << ',';
    } else {
      out << ",,,,,,,";
    }
    out << csv_text(r.error) << '\n';
  }
  return out.str();
}

}  // namespace nestedg

#include <cmath>

#include "doctest.h"
#include "nestedg/simulation.hpp"

using namespace nestedg;

namespace {

// Per-interval censoring rate among subjects entering intervals j >= 2 alive
// and uncensored; split by baseline treatment.
struct CensorRate {
  std::size_t at_risk[2]{0, 0};
  std::size_t censored[2]{0, 0};
  double rate(int a) const { return static_cast<double>(censored[a]) / static_cast<double>(at_risk[a]); }
  double overall() const {
    return static_cast<double>(censored[0] + censored[1]) / static_cast<double>(at_risk[0] + at_risk[1]);
  }
};

CensorRate censor_rate(const Cohort& c) {
  CensorRate out;
  for (const auto& s : c.subjects) {
    const int a1 = *s.records[0].a;
    for (std::size_t k = 1; k < s.records.size(); ++k) {
      if (s.records[k - 1].d == 1) break;
      ++out.at_risk[a1];
      if (s.records[k].c == 1) {
        ++out.censored[a1];
        break;
      }
    }
  }
  return out;
}

double skewness(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double m = 0.0;
  for (double v : x) m += v;
  m /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double v : x) {
    m2 += (v - m) * (v - m);
    m3 += (v - m) * (v - m) * (v - m);
  }
  return (m3 / n) / std::pow(m2 / n, 1.5);
}

}  // namespace

TEST_SUITE("simulation") {
  TEST_CASE("defaults and validation") {
    DgpConfig d;
    CHECK(d.N == 1000);
    CHECK(d.J == 6);
    CHECK_NOTHROW(validate_dgp(d));
    d.N = 0;
    CHECK_THROWS_AS(validate_dgp(d), InputError);
    d = {};
    d.family_treated = Family::bernoulli;
    CHECK_THROWS_AS(validate_dgp(d), InputError);
    CHECK_THROWS_AS(parse_censoring("sometimes"), InputError);
    CHECK(parse_censoring("staggered_entry") == CensoringMechanism::staggered_entry);
    CHECK(parse_estimator("li_iptw") == Estimator::li_iptw);

    const DgpConfig n = null_dgp({});
    CHECK(n.beta_baseline[2] == 0.0);
    CHECK(n.beta[3] == 0.0);
    CHECK(n.beta[4] == 0.0);
    CHECK(n.alpha[2] == 0.0);
    CHECK(n.beta[5] == DgpConfig{}.beta[5]);
  }

  TEST_CASE("generated cohorts are valid and reproducible") {
    for (auto m : {CensoringMechanism::none, CensoringMechanism::random_p, CensoringMechanism::staggered_entry,
                   CensoringMechanism::nonrandom_dropout}) {
      CAPTURE(to_string(m));
      DgpConfig d;
      d.seed = 21;
      d.censoring = m;
      const Cohort a = generate_cohort(d);
      const Cohort b = generate_cohort(d, 4);
      CHECK(a == b);
      const auto report = validate_cohort(a);
      CHECK(report.ok());
      CHECK(a.subjects.size() == 1000);
      CHECK(a.grid.J == 6);
    }
  }

  TEST_CASE("censoring rates") {
    DgpConfig d;
    d.N = 50000;
    d.seed = 22;
    {
      const auto r = censor_rate(generate_cohort(d));
      CHECK(r.censored[0] + r.censored[1] == 0);
    }
    d.censoring = CensoringMechanism::random_p;
    {
      const auto r = censor_rate(generate_cohort(d));
      const double n = static_cast<double>(r.at_risk[0] + r.at_risk[1]);
      CHECK(std::abs(r.overall() - 0.05) < 4.0 * std::sqrt(0.05 * 0.95 / n));
      // Independent of treatment.
      CHECK(std::abs(r.rate(1) - r.rate(0)) < 0.01);
    }
    d.censoring = CensoringMechanism::staggered_entry;
    {
      const auto r = censor_rate(generate_cohort(d));
      CHECK(r.overall() > 0.02);
      CHECK(r.overall() < 0.08);
      CHECK(r.rate(1) > r.rate(0));
    }
    d.censoring = CensoringMechanism::nonrandom_dropout;
    {
      const auto r = censor_rate(generate_cohort(d));
      CHECK(r.overall() > 0.02);
      CHECK(r.overall() < 0.10);
      CHECK(r.rate(1) > r.rate(0));
    }
  }

  TEST_CASE("cost family follows current treatment") {
    DgpConfig d;
    d.N = 40000;
    d.seed = 23;
    d.family_control = Family::normal;
    d.family_treated = Family::inverse_gaussian;
    d.ig_lambda = 5.0;  // make the skew obvious
    const Cohort c = generate_cohort(d);
    std::vector<double> res[2];
    for (const auto& s : c.subjects) {
      const auto& r = s.records[0];
      const double mu = d.beta_baseline[0] + d.beta_baseline[1] * r.l[0] + d.beta_baseline[2] * *r.a;
      res[*r.a].push_back(*r.y - mu);
    }
    CHECK(std::abs(skewness(res[0])) < 0.1);
    CHECK(skewness(res[1]) > 1.0);
  }

  TEST_CASE("oracle values") {
    DgpConfig d;
    d.seed = 24;
    const auto o0 = true_values_oracle(d, TreatmentRegime::constant(6, 0), 200000);
    const auto o1 = true_values_oracle(d, TreatmentRegime::constant(6, 1), 200000, 4);
    CHECK(o0.M == 200000);
    // Reference values from 1e6-path runs: 66.652 and 72.064.
    CHECK(std::abs(o0.mu - 66.652) < 4.0 * o0.mc_se + 0.01);
    CHECK(std::abs(o1.mu - 72.064) < 4.0 * o1.mc_se + 0.01);
    CHECK(true_values_oracle(d, TreatmentRegime::constant(6, 1), 200000, 1).mu == o1.mu);
    CHECK_THROWS_AS(true_values_oracle(d, TreatmentRegime::constant(5, 1), 10), InputError);

    const DgpConfig n = null_dgp(d);
    const auto n0 = true_values_oracle(n, TreatmentRegime::constant(6, 0), 200000);
    const auto n1 = true_values_oracle(n, TreatmentRegime::constant(6, 1), 200000);
    CHECK(std::abs(n1.mu - n0.mu) < 4.0 * std::hypot(n0.mc_se, n1.mc_se));
  }

  TEST_CASE("nested g-formula on a large cohort agrees with the oracle") {
    DgpConfig d;
    d.N = 20000;
    d.seed = 25;
    const Cohort c = generate_cohort(d);
    const auto m = fit_sequential_models(c, default_model_spec());
    const auto est =
        estimate_delta(m, TreatmentRegime::constant(6, 1), TreatmentRegime::constant(6, 0), 100000, 26);
    // Sampling SD at N = 20000 is about 0.13.
    CHECK(std::abs(est.delta - 5.413) < 0.45);
  }

  TEST_CASE("small study is reproducible across thread counts") {
    StudyConfig s;
    s.dgp.censoring = CensoringMechanism::nonrandom_dropout;
    s.reps = 4;
    s.R = 2000;
    s.B = 5;
    s.oracle_M = 20000;
    s.seed = 27;
    s.estimators = {Estimator::nested_g, Estimator::lin_partitioned, Estimator::li_iptw, Estimator::lin_complete_case};
    s.fit_families = {Family::normal, Family::gamma};
    const auto a = run_study(s);
    s.threads = 3;
    const auto b = run_study(s);
    REQUIRE(a.rows.size() == 5);
    CHECK(study_summary_csv(a.rows) == study_summary_csv(b.rows));
    CHECK(study_reps_csv("x", a.reps) == study_reps_csv("x", b.reps));
    for (const auto& r : a.rows) {
      CAPTURE(r.estimator);
      CHECK(r.n_ok + r.n_failed == 4);
      CHECK(std::isfinite(r.mean_estimate));
    }
    CHECK(std::isfinite(a.rows[0].coverage));
    CHECK(std::isnan(a.rows[2].coverage));
    CHECK(a.true_delta == doctest::Approx(a.true_mu_a - a.true_mu_b));
  }

  TEST_CASE("study failures and level studies") {
    StudyConfig s;
    s.dgp.N = 30;  // too few deaths to fit the death models
    s.reps = 4;
    s.R = 100;
    s.B = 0;
    s.true_delta = 0.0;
    CHECK_THROWS_AS(run_study(s), StudyError);
    s.B = 1;
    CHECK_THROWS_AS(validate_study(s), InputError);
    s.B = 0;
    CHECK_THROWS_AS(run_level_study(s), InputError);
  }
}

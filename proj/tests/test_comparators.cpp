#include <cmath>

#include "doctest.h"
#include "nestedg/comparators.hpp"
#include "nestedg/simulation.hpp"
#include "oracles.hpp"

using namespace nestedg;

namespace {

IntervalRecord obs(double l, int a, double y, int d = 0) { return IntervalRecord{0, {l}, a, y, d}; }
IntervalRecord censored() { return IntervalRecord{1, {}, std::nullopt, std::nullopt, std::nullopt}; }
IntervalRecord after_death() { return IntervalRecord{0, {}, std::nullopt, 0.0, 1}; }

// Eight subjects on a two-interval grid of unit intervals. Two are censored
// at t = 1, one dies in interval 1 and one in interval 2.
Cohort eight_subjects() {
  Cohort c;
  c.grid = make_grid(2, 2.0);
  c.subjects = {
      {"s1", {obs(0.5, 1, 10), obs(0.4, 1, 12)}},
      {"s2", {obs(-0.3, 0, 8, 1), after_death()}},
      {"s3", {obs(1.0, 1, 11), censored()}},
      {"s4", {obs(0.2, 0, 9), obs(0.1, 0, 10)}},
      {"s5", {obs(-0.5, 1, 13), obs(-0.2, 1, 7, 1)}},
      {"s6", {obs(0.7, 0, 9), censored()}},
      {"s7", {obs(0.0, 1, 12), obs(0.3, 1, 14)}},
      {"s8", {obs(-1.0, 0, 7), obs(-0.6, 0, 9)}},
  };
  return c;
}

std::vector<double> wls(const std::vector<std::vector<double>>& rows, const std::vector<double>& y,
                        const std::vector<double>& w) {
  return oracle::wls(rows, y, w);
}

}  // namespace

TEST_SUITE("comparators") {
  TEST_CASE("kaplan-meier with ties") {
    const double x[] = {1, 2, 2, 3, 4};
    const int e[] = {1, 0, 1, 1, 0};
    const auto K = km_censoring_survival(x, e);
    CHECK(K.at(0.5) == 1.0);
    CHECK(K.at(1.0) == doctest::Approx(0.8));
    CHECK(K.left_limit(1.0) == 1.0);
    CHECK(K.at(2.0) == doctest::Approx(0.6));
    CHECK(K.left_limit(2.0) == doctest::Approx(0.8));
    CHECK(K.at(3.5) == doctest::Approx(0.3));
    CHECK(K.at(10.0) == doctest::Approx(0.3));
  }

  TEST_CASE("kaplan-meier equals redistribute-to-the-right") {
    RandomStream rng(3, 0);
    for (std::size_t n = 1; n <= 6; ++n) {
      std::vector<double> x(n);
      for (auto& v : x) v = rng.uniform() * 10.0;
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        std::vector<int> e(n);
        for (std::size_t i = 0; i < n; ++i) e[i] = (mask >> i) & 1u;
        const auto K = km_censoring_survival(x, e);
        std::vector<double> at = x;
        at.push_back(0.0);
        at.push_back(11.0);
        const auto brute = oracle::redistribute_survival(x, e, at);
        for (std::size_t k = 0; k < at.size(); ++k) REQUIRE(K.at(at[k]) == doctest::Approx(brute[k]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("cohort KM treats end of follow-up as censoring") {
    const auto K = km_censoring_survival(eight_subjects());
    // t = 1: 8 at risk, s3 and s6 censored. t = 2: 5 at risk, 4 reach the end alive.
    CHECK(K.at(1.0) == doctest::Approx(0.75));
    CHECK(K.left_limit(2.0) == doctest::Approx(0.75));
    CHECK(K.at(2.0) == doctest::Approx(0.15));
  }

  TEST_CASE("complete-case estimator matches a hand-weighted solve") {
    const Cohort c = eight_subjects();
    const auto W = baseline_design(c);
    const auto est = ipcw_complete_case(c, W);
    // Complete cases s1 s2 s4 s5 s7 s8; weight 1 / K(T-) is 1 for s2 (T = 1) and 4/3 otherwise.
    const double w = 1.0 / 0.75;
    const auto zeta = wls({{1, 1, 0.5}, {1, 0, -0.3}, {1, 0, 0.2}, {1, 1, -0.5}, {1, 1, 0.0}, {1, 0, -1.0}},
                          {22, 8, 19, 20, 26, 16}, {w, 1, w, w, w, w});
    CHECK(est.contributors == 6);
    for (int k = 0; k < 3; ++k) CHECK(est.zeta[k] == doctest::Approx(zeta[static_cast<std::size_t>(k)]).epsilon(1e-12));
    CHECK(est.delta_itt == est.zeta[1]);
  }

  TEST_CASE("partitioned estimator matches per-interval hand solves") {
    const Cohort c = eight_subjects();
    const auto est = partitioned_ipcw(c, baseline_design(c));
    // Interval 1: everyone contributes Y_1 with weight 1.
    const auto z1 = wls({{1, 1, 0.5}, {1, 0, -0.3}, {1, 1, 1.0}, {1, 0, 0.2}, {1, 1, -0.5}, {1, 0, 0.7}, {1, 1, 0.0},
                         {1, 0, -1.0}},
                        {10, 8, 11, 9, 13, 9, 12, 7}, std::vector<double>(8, 1.0));
    // Interval 2: s2 contributes zero cost at T = 1 (weight 1), s3 and s6 drop out.
    const double w = 1.0 / 0.75;
    const auto z2 = wls({{1, 1, 0.5}, {1, 0, -0.3}, {1, 0, 0.2}, {1, 1, -0.5}, {1, 1, 0.0}, {1, 0, -1.0}},
                        {12, 0, 10, 7, 14, 9}, {w, 1, w, w, w, w});
    REQUIRE(est.per_interval.size() == 2);
    CHECK(est.per_interval[0] == doctest::Approx(z1[1]).epsilon(1e-12));
    CHECK(est.per_interval[1] == doctest::Approx(z2[1]).epsilon(1e-12));
    CHECK(est.delta_itt == doctest::Approx(z1[1] + z2[1]).epsilon(1e-12));
    CHECK(est.zeta[0] == doctest::Approx(z1[0] + z2[0]).epsilon(1e-12));
    CHECK(est.contributors == 14);
  }

  TEST_CASE("one interval: partitioned equals complete case") {
    Cohort c;
    c.grid = make_grid(1, 1.0);
    RandomStream rng(4, 0);
    for (int i = 0; i < 50; ++i)
      c.subjects.push_back({std::to_string(i), {obs(draw_normal(rng, 0, 1), i % 2, 10 + 5 * rng.uniform(), i % 7 == 0)}});
    const auto W = baseline_design(c);
    const auto a = ipcw_complete_case(c, W);
    const auto b = partitioned_ipcw(c, W);
    for (int k = 0; k < 3; ++k) CHECK(a.zeta[k] == doctest::Approx(b.zeta[k]).epsilon(1e-12));
  }

  TEST_CASE("constant propensity reduces to the partitioned estimator") {
    DgpConfig dgp;
    dgp.N = 500;
    dgp.seed = 12;
    dgp.censoring = CensoringMechanism::random_p;
    const Cohort c = generate_cohort(dgp);
    const auto W = baseline_design(c);
    const std::vector<double> half(c.subjects.size(), 0.5);
    const auto p = partitioned_ipcw(c, W);
    const auto q = iptw_partitioned(c, W, half);
    CHECK(q.delta_itt == doctest::Approx(p.delta_itt).epsilon(1e-10));
    CHECK(q.method == IttMethod::iptw_partitioned);
  }

  TEST_CASE("without censoring every estimator is least squares on total cost") {
    DgpConfig dgp;
    dgp.N = 400;
    dgp.seed = 13;
    const Cohort c = generate_cohort(dgp);
    const auto W = baseline_design(c);
    const auto cc = ipcw_complete_case(c, W);
    const auto part = partitioned_ipcw(c, W);
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
      rows.push_back({W(static_cast<Eigen::Index>(i), 0), W(static_cast<Eigen::Index>(i), 1), W(static_cast<Eigen::Index>(i), 2)});
      y.push_back(cumulative_cost(c.subjects[i], c.grid.J));
    }
    const auto ols = wls(rows, y, std::vector<double>(y.size(), 1.0));
    CHECK(cc.delta_itt == doctest::Approx(ols[1]).epsilon(1e-9));
    CHECK(part.delta_itt == doctest::Approx(ols[1]).epsilon(1e-9));
    CHECK(cc.contributors == c.subjects.size());
  }

  TEST_CASE("design and positivity errors") {
    Cohort c = eight_subjects();
    for (auto& s : c.subjects) s.records[0].a = 1;
    CHECK_THROWS_AS(ipcw_complete_case(c, baseline_design(c)), SingularDesignError);
    CHECK_THROWS_AS(fit_propensity(c), InsufficientDataError);

    const Cohort ok = eight_subjects();
    std::vector<double> pi(8, 0.5);
    pi[3] = 1.0;
    CHECK_THROWS_WITH_AS(iptw_partitioned(ok, baseline_design(ok), pi), doctest::Contains("s4"), PositivityError);
    CHECK_THROWS_AS(partitioned_ipcw(ok, Eigen::MatrixXd::Ones(3, 3)), InputError);
    CHECK_THROWS_AS(interval_cost(ok.subjects[2], 2), DomainError);
    CHECK(interval_cost(ok.subjects[1], 2) == 0.0);
  }

  TEST_CASE("propensity model") {
    Cohort sep = eight_subjects();
    for (auto& s : sep.subjects) s.records[0].a = s.records[0].l[0] > 0 ? 1 : 0;
    CHECK_THROWS_WITH_AS(fit_propensity(sep), doctest::Contains("propensity model"), NonConvergenceError);

    DgpConfig dgp;
    dgp.N = 20000;
    dgp.J = 1;
    dgp.seed = 14;
    const Cohort c = generate_cohort(dgp);
    const auto ps = fit_propensity(c);
    CHECK(std::abs(ps.coefficients[0] - dgp.eta_baseline[0]) < 0.06);
    CHECK(std::abs(ps.coefficients[1] - dgp.eta_baseline[1]) < 0.08);
    const auto pi = propensity_scores(c, ps);
    CHECK(pi.size() == c.subjects.size());
  }
}

#include "nestedg/comparators.hpp"

#include <algorithm>
#include <numeric>

namespace nestedg {

double StepSurvival::at(double t) const noexcept {
  const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  if (it == jump_times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - jump_times.begin()) - 1];
}

double StepSurvival::left_limit(double t) const noexcept {
  const auto it = std::lower_bound(jump_times.begin(), jump_times.end(), t);
  if (it == jump_times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - jump_times.begin()) - 1];
}

StepSurvival km_censoring_survival(std::span<const double> x, std::span<const int> censor_event) {
  if (x.size() != censor_event.size()) throw InputError("KM: times and indicators differ in length");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  StepSurvival out;
  double s = 1.0;
  std::size_t k = 0;
  const std::size_t n = order.size();
  while (k < n) {
    const double t = x[order[k]];
    const std::size_t at_risk = n - k;
    std::size_t events = 0;
    std::size_t m = k;
    for (; m < n && x[order[m]] == t; ++m) events += censor_event[order[m]] != 0 ? 1 : 0;
    if (events > 0) {
      s *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
      out.jump_times.push_back(t);
      out.values.push_back(s);
    }
    k = m;
  }
  return out;
}

StepSurvival km_censoring_survival(const Cohort& cohort) {
  std::vector<double> x;
  std::vector<int> e;
  for (const auto& t : complete_case_flags(cohort)) {
    x.push_back(t.X);
    e.push_back(t.delta_tilde ? 0 : 1);
  }
  return km_censoring_survival(x, e);
}

std::string_view to_string(IttMethod m) noexcept {
  switch (m) {
    case IttMethod::complete_case: return "complete_case";
    case IttMethod::partitioned: return "partitioned";
    case IttMethod::iptw_partitioned: return "iptw_partitioned";
  }
  return "?";
}

namespace {

const IntervalRecord& baseline_record(const SubjectPanel& s) {
  if (s.records.empty() || s.records.front().c != 0 || !s.records.front().a || s.records.front().l.empty())
    throw InputError("subject '" + s.id + "' lacks baseline treatment/confounders");
  return s.records.front();
}

struct WeightedRows {
  std::vector<std::size_t> idx;
  std::vector<double> w;
  std::vector<double> y;
};

Eigen::VectorXd weighted_solve(const Eigen::MatrixXd& W, const WeightedRows& rows, const std::string& what) {
  const Eigen::Index q = W.cols();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(q);
  for (std::size_t k = 0; k < rows.idx.size(); ++k) {
    const auto row = W.row(static_cast<Eigen::Index>(rows.idx[k])).transpose();
    M.noalias() += rows.w[k] * row * row.transpose();
    v.noalias() += rows.w[k] * rows.y[k] * row;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  if (static_cast<Eigen::Index>(rows.idx.size()) < q || qr.rank() < q)
    throw SingularDesignError(what + ": weighted design is singular (" + std::to_string(rows.idx.size()) +
                              " contributors, " + std::to_string(q) + " coefficients)");
  return qr.solve(v);
}

void check_positivity(const Cohort& cohort, const std::vector<std::size_t>& bad, const std::string& what) {
  if (bad.empty()) return;
  std::string ids;
  for (std::size_t k = 0; k < bad.size() && k < 5; ++k) ids += (k ? ", " : "") + cohort.subjects[bad[k]].id;
  if (bad.size() > 5) ids += ", ...";
  throw PositivityError(what + ": zero censoring survival at the evaluation time for " + std::to_string(bad.size()) +
                        " contributor(s): " + ids);
}

void check_design(const Cohort& cohort, const Eigen::MatrixXd& W) {
  if (static_cast<std::size_t>(W.rows()) != cohort.subjects.size())
    throw InputError("baseline design has " + std::to_string(W.rows()) + " rows for " +
                     std::to_string(cohort.subjects.size()) + " subjects");
  if (W.cols() < 2) throw InputError("baseline design needs an intercept and a treatment column");
}

IttEstimate partitioned_impl(const Cohort& cohort, const Eigen::MatrixXd& W, std::span<const double> treatment_weights,
                             IttMethod method) {
  check_design(cohort, W);
  const auto times = complete_case_flags(cohort);
  const StepSurvival K = km_censoring_survival(cohort);
  IttEstimate est;
  est.method = method;
  est.zeta = Eigen::VectorXd::Zero(W.cols());
  for (int j = 1; j <= cohort.grid.J; ++j) {
    const double tau_j = cohort.grid.boundary(j);
    WeightedRows rows;
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
      const double t_ij = std::min(times[i].death_time, tau_j);
      if (!(times[i].censor_time >= t_ij)) continue;
      const double k = K.left_limit(t_ij);
      if (!(k > 0.0)) {
        bad.push_back(i);
        continue;
      }
      const double tw = treatment_weights.empty() ? 1.0 : treatment_weights[i];
      rows.idx.push_back(i);
      rows.w.push_back(tw / k);
      rows.y.push_back(interval_cost(cohort.subjects[i], j));
    }
    const std::string what = std::string(to_string(method)) + " interval " + std::to_string(j);
    check_positivity(cohort, bad, what);
    const Eigen::VectorXd zeta = weighted_solve(W, rows, what);
    est.zeta += zeta;
    est.per_interval.push_back(zeta[1]);
    est.contributors += rows.idx.size();
  }
  est.delta_itt = std::accumulate(est.per_interval.begin(), est.per_interval.end(), 0.0);
  return est;
}

}  // namespace

Eigen::MatrixXd baseline_design(const Cohort& cohort) {
  const int p = cohort.confounder_dim;
  Eigen::MatrixXd W(static_cast<Eigen::Index>(cohort.subjects.size()), 2 + p);
  for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
    const auto& rec = baseline_record(cohort.subjects[i]);
    const auto r = static_cast<Eigen::Index>(i);
    W(r, 0) = 1.0;
    W(r, 1) = *rec.a;
    for (int q = 0; q < p; ++q) W(r, 2 + q) = rec.l.at(static_cast<std::size_t>(q));
  }
  return W;
}

double interval_cost(const SubjectPanel& subject, int j) {
  const auto death = death_interval(subject);
  if (death && *death < j) return 0.0;
  const auto k = static_cast<std::size_t>(j - 1);
  if (k >= subject.records.size() || subject.records[k].c != 0 || !subject.records[k].y)
    throw DomainError("subject '" + subject.id + "': cost of interval " + std::to_string(j) + " is unobserved");
  return *subject.records[k].y;
}

IttEstimate ipcw_complete_case(const Cohort& cohort, const Eigen::MatrixXd& W) {
  check_design(cohort, W);
  const auto times = complete_case_flags(cohort);
  const StepSurvival K = km_censoring_survival(cohort);
  WeightedRows rows;
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
    if (!times[i].delta) continue;
    const double k = K.left_limit(times[i].T);
    if (!(k > 0.0)) {
      bad.push_back(i);
      continue;
    }
    double total = 0.0;
    for (int j = 1; j <= cohort.grid.J; ++j) total += interval_cost(cohort.subjects[i], j);
    rows.idx.push_back(i);
    rows.w.push_back(1.0 / k);
    rows.y.push_back(total);
  }
  check_positivity(cohort, bad, "complete_case");
  IttEstimate est;
  est.method = IttMethod::complete_case;
  est.zeta = weighted_solve(W, rows, "complete_case");
  est.delta_itt = est.zeta[1];
  est.contributors = rows.idx.size();
  return est;
}

IttEstimate partitioned_ipcw(const Cohort& cohort, const Eigen::MatrixXd& W) {
  return partitioned_impl(cohort, W, {}, IttMethod::partitioned);
}

FittedGlm fit_propensity(const Cohort& cohort) {
  const int p = cohort.confounder_dim;
  const auto n = static_cast<Eigen::Index>(cohort.subjects.size());
  Eigen::MatrixXd X(n, 1 + p);
  Eigen::VectorXd a(n);
  std::size_t treated = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = baseline_record(cohort.subjects[static_cast<std::size_t>(i)]);
    X(i, 0) = 1.0;
    for (int q = 0; q < p; ++q) X(i, 1 + q) = rec.l.at(static_cast<std::size_t>(q));
    a[i] = *rec.a;
    treated += *rec.a == 1 ? 1 : 0;
  }
  if (treated == 0 || treated == static_cast<std::size_t>(n))
    throw InsufficientDataError("propensity model needs both treatment arms at baseline");
  std::vector<std::string> names{"1"};
  for (int q = 0; q < p; ++q) names.push_back("L_" + std::to_string(q + 1));
  try {
    return fit_glm(X, a, make_spec(Family::bernoulli, names));
  } catch (const NonConvergenceError& e) {
    throw NonConvergenceError(std::string("propensity model: ") + e.what(), e.last_iterate());
  }
}

std::vector<double> propensity_scores(const Cohort& cohort, const FittedGlm& propensity) {
  const int p = cohort.confounder_dim;
  std::vector<double> pi;
  std::vector<double> row(static_cast<std::size_t>(1 + p));
  pi.reserve(cohort.subjects.size());
  for (const auto& s : cohort.subjects) {
    const auto& rec = baseline_record(s);
    row[0] = 1.0;
    for (int q = 0; q < p; ++q) row[static_cast<std::size_t>(1 + q)] = rec.l.at(static_cast<std::size_t>(q));
    pi.push_back(predict_mean(propensity, row.data()));
  }
  return pi;
}

IttEstimate iptw_partitioned(const Cohort& cohort, const Eigen::MatrixXd& W, const FittedGlm& propensity) {
  const auto pi = propensity_scores(cohort, propensity);
  return iptw_partitioned(cohort, W, pi);
}

IttEstimate iptw_partitioned(const Cohort& cohort, const Eigen::MatrixXd& W, std::span<const double> pi) {
  if (pi.size() != cohort.subjects.size()) throw InputError("one propensity score per subject is required");
  std::vector<double> tw(pi.size());
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (!(pi[i] > 0.0 && pi[i] < 1.0)) {
      bad.push_back(i);
      continue;
    }
    const int a = *baseline_record(cohort.subjects[i]).a;
    tw[i] = a == 1 ? 1.0 / pi[i] : 1.0 / (1.0 - pi[i]);
  }
  if (!bad.empty()) {
    std::string ids;
    for (std::size_t k = 0; k < bad.size() && k < 5; ++k) ids += (k ? ", " : "") + cohort.subjects[bad[k]].id;
    throw PositivityError("propensity score at 0 or 1 for " + std::to_string(bad.size()) + " subject(s): " + ids);
  }
  return partitioned_impl(cohort, W, tw, IttMethod::iptw_partitioned);
}

nlohmann::json to_json(const IttEstimate& e) {
  return {{"method", to_string(e.method)},
          {"delta_itt", e.delta_itt},
          {"zeta", std::vector<double>(e.zeta.data(), e.zeta.data() + e.zeta.size())},
          {"per_interval", e.per_interval},
          {"contributors", e.contributors}};
}

}  // namespace nestedg

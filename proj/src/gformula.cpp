#include "nestedg/gformula.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "nestedg/parallel.hpp"

namespace nestedg {

Term parse_term(std::string_view name) {
  if (name == "1") return Term::intercept;
  if (name == "L_prev") return Term::l_prev;
  if (name == "A_prev") return Term::a_prev;
  if (name == "Y_prev") return Term::y_prev;
  if (name == "L") return Term::l;
  if (name == "A") return Term::a;
  if (name == "Y") return Term::y;
  throw InputError("unknown predictor '" + std::string(name) +
                   "' (expected one of 1, L_prev, A_prev, Y_prev, L, A, Y)");
}

std::string_view to_string(Term t) noexcept {
  switch (t) {
    case Term::intercept: return "1";
    case Term::l_prev: return "L_prev";
    case Term::a_prev: return "A_prev";
    case Term::y_prev: return "Y_prev";
    case Term::l: return "L";
    case Term::a: return "A";
    case Term::y: return "Y";
  }
  return "?";
}

DesignTerms::DesignTerms(const std::vector<std::string>& names, int confounder_dim)
    : confounder_dim_(confounder_dim) {
  for (const auto& n : names) {
    const Term t = parse_term(n);
    terms_.push_back(t);
    columns_ += (t == Term::l || t == Term::l_prev) ? confounder_dim : 1;
  }
}

bool DesignTerms::uses(Term t) const noexcept { return std::find(terms_.begin(), terms_.end(), t) != terms_.end(); }

void DesignTerms::fill(const RowContext& ctx, double* out) const noexcept {
  for (Term t : terms_) {
    switch (t) {
      case Term::intercept: *out++ = 1.0; break;
      case Term::a_prev: *out++ = ctx.a_prev; break;
      case Term::y_prev: *out++ = ctx.y_prev; break;
      case Term::a: *out++ = ctx.a; break;
      case Term::y: *out++ = ctx.y; break;
      case Term::l_prev:
        for (int q = 0; q < confounder_dim_; ++q) *out++ = ctx.l_prev[static_cast<std::size_t>(q)];
        break;
      case Term::l:
        for (int q = 0; q < confounder_dim_; ++q) *out++ = ctx.l[static_cast<std::size_t>(q)];
        break;
    }
  }
}

SequentialModelSpec default_model_spec(Family cost_family) {
  SequentialModelSpec spec;
  spec.markov = true;
  spec.baseline.confounder = make_spec(Family::normal, {"1"});
  spec.baseline.cost = make_spec(cost_family, {"1", "L", "A"});
  spec.baseline.death = make_spec(Family::bernoulli, {"1", "L", "Y"});
  spec.followup.confounder = make_spec(Family::normal, {"1", "L_prev", "A_prev", "Y_prev"});
  spec.followup.cost = make_spec(cost_family, {"1", "L_prev", "L", "A_prev", "A", "Y_prev"});
  spec.followup.death = make_spec(Family::bernoulli, {"1", "L_prev", "L", "Y"});
  return spec;
}

namespace {

void check_terms(const GlmSpec& spec, const std::string& model, bool baseline, std::initializer_list<Term> forbidden) {
  validate_spec(spec);
  if (spec.predictors.empty()) throw InputError(model + " model has no predictors");
  std::set<Term> seen;
  for (const auto& name : spec.predictors) {
    const Term t = parse_term(name);
    if (!seen.insert(t).second) throw InputError(model + " model lists predictor '" + name + "' twice");
    const bool prev = t == Term::l_prev || t == Term::a_prev || t == Term::y_prev;
    if (baseline && prev) throw InputError(model + " model cannot use '" + name + "' at baseline");
    for (Term f : forbidden)
      if (t == f) throw InputError(model + " model cannot use '" + name + "': not yet observed at its position");
  }
}

}  // namespace

void validate_model_spec(const SequentialModelSpec& spec) {
  using enum Term;
  check_terms(spec.baseline.confounder, "baseline confounder", true, {l, a, y});
  check_terms(spec.baseline.cost, "baseline cost", true, {y});
  check_terms(spec.baseline.death, "baseline death", true, {});
  check_terms(spec.followup.confounder, "follow-up confounder", false, {l, a, y});
  check_terms(spec.followup.cost, "follow-up cost", false, {y});
  check_terms(spec.followup.death, "follow-up death", false, {});
  if (spec.baseline.death.family != Family::bernoulli || spec.followup.death.family != Family::bernoulli)
    throw InputError("death models must use the bernoulli family");
}

void validate_regime(const TreatmentRegime& regime, int J) {
  if (static_cast<int>(regime.assignments.size()) != J)
    throw InputError("treatment regime has length " + std::to_string(regime.assignments.size()) + ", expected J = " +
                     std::to_string(J));
  for (int a : regime.assignments)
    if (a != 0 && a != 1) throw InputError("treatment regime entries must be 0 or 1");
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

struct StageRows {
  std::vector<double> conf_x, cost_x, death_x;  // row-major designs
  std::vector<double> l, y, d;                  // responses; l is n x p row-major
  std::size_t n = 0;
};

struct StageTerms {
  DesignTerms conf, cost, death;
};

StageTerms compile(const SequentialModelSpec::Triple& t, int p) {
  return {DesignTerms(t.confounder.predictors, p), DesignTerms(t.cost.predictors, p), DesignTerms(t.death.predictors, p)};
}

void append_row(StageRows& rows, const StageTerms& terms, const RowContext& ctx, int d) {
  auto grow = [](std::vector<double>& v, int cols) {
    v.resize(v.size() + static_cast<std::size_t>(cols));
    return v.data() + v.size() - cols;
  };
  terms.conf.fill(ctx, grow(rows.conf_x, terms.conf.columns()));
  terms.cost.fill(ctx, grow(rows.cost_x, terms.cost.columns()));
  terms.death.fill(ctx, grow(rows.death_x, terms.death.columns()));
  rows.l.insert(rows.l.end(), ctx.l.begin(), ctx.l.end());
  rows.y.push_back(ctx.y);
  rows.d.push_back(static_cast<double>(d));
  ++rows.n;
}

const IntervalRecord& observed(const SubjectPanel& s, std::size_t k, int p) {
  const auto& rec = s.records[k];
  if (static_cast<int>(rec.l.size()) != p || !rec.a || !rec.y || !rec.d)
    throw InputError("subject '" + s.id + "', interval " + std::to_string(k + 1) +
                     ": missing or ragged fields before censoring/death (run validate)");
  return rec;
}

Eigen::MatrixXd to_matrix(const std::vector<double>& row_major, std::size_t n, int cols) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMat>(row_major.data(), static_cast<Eigen::Index>(n), cols);
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

FittedGlm fit_named(const std::string& name, const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GlmSpec& spec) {
  try {
    return fit_glm(X, y, spec);
  } catch (const NonConvergenceError& e) {
    throw NonConvergenceError(name + " model: " + e.what(), e.last_iterate());
  } catch (const SingularDesignError& e) {
    throw SingularDesignError(name + " model: " + e.what());
  } catch (const DomainError& e) {
    throw DomainError(name + " model: " + e.what());
  }
}

ModelTriple fit_stage(const std::string& stage, const StageRows& rows, const SequentialModelSpec::Triple& spec,
                      const StageTerms& terms, int p) {
  if (rows.n == 0)
    throw InsufficientDataError("no observations for the " + stage + " confounder, cost and death models");
  ModelTriple out;
  const Eigen::MatrixXd conf_x = to_matrix(rows.conf_x, rows.n, terms.conf.columns());
  for (int q = 0; q < p; ++q) {
    Eigen::VectorXd lq(static_cast<Eigen::Index>(rows.n));
    for (std::size_t i = 0; i < rows.n; ++i) lq[static_cast<Eigen::Index>(i)] = rows.l[i * static_cast<std::size_t>(p) + static_cast<std::size_t>(q)];
    const std::string name = stage + " confounder" + (p > 1 ? " [" + std::to_string(q + 1) + "]" : "");
    out.confounder.push_back(fit_named(name, conf_x, lq, spec.confounder));
  }
  out.cost = fit_named(stage + " cost", to_matrix(rows.cost_x, rows.n, terms.cost.columns()), to_vector(rows.y), spec.cost);
  out.death = fit_named(stage + " death", to_matrix(rows.death_x, rows.n, terms.death.columns()), to_vector(rows.d), spec.death);
  return out;
}

}  // namespace

SequentialModelSet fit_sequential_models(const Cohort& cohort, const SequentialModelSpec& spec,
                                         std::span<const std::size_t> subjects) {
  validate_model_spec(spec);
  if (!spec.markov) throw UnimplementedError("non-Markov (full-history) sequential models are unimplemented");
  const int J = cohort.grid.J;
  const int p = cohort.confounder_dim;
  const StageTerms base_terms = compile(spec.baseline, p);
  const StageTerms follow_terms = compile(spec.followup, p);

  StageRows base, follow;
  auto visit = [&](const SubjectPanel& s) {
    if (s.records.empty() || s.records.front().c != 0) return;
    const auto& r1 = observed(s, 0, p);
    append_row(base, base_terms, RowContext{{}, 0.0, 0.0, r1.l, static_cast<double>(*r1.a), *r1.y}, *r1.d);
    const std::size_t n = std::min<std::size_t>(s.records.size(), static_cast<std::size_t>(J));
    for (std::size_t k = 1; k < n; ++k) {
      const auto& prev = s.records[k - 1];
      if (*prev.d != 0) break;
      if (s.records[k].c != 0) break;
      const auto& rec = observed(s, k, p);
      append_row(follow, follow_terms,
                 RowContext{prev.l, static_cast<double>(*prev.a), *prev.y, rec.l, static_cast<double>(*rec.a), *rec.y},
                 *rec.d);
    }
  };
  if (subjects.empty()) {
    for (const auto& s : cohort.subjects) visit(s);
  } else {
    for (std::size_t i : subjects) visit(cohort.subjects.at(i));
  }

  SequentialModelSet set;
  set.spec = spec;
  set.J = J;
  set.confounder_dim = p;
  set.theta1 = fit_stage("baseline", base, spec.baseline, base_terms, p);
  set.n_baseline_obs = base.n;
  if (J > 1) {
    set.theta = fit_stage("follow-up", follow, spec.followup, follow_terms, p);
    set.n_followup_obs = follow.n;
  }
  return set;
}

// ---------------------------------------------------------------------------
// Monte-Carlo integration

namespace {

bool positive_mean(Family f) { return f == Family::gamma || f == Family::inverse_gaussian; }

struct CompiledStage {
  StageTerms terms;
  const ModelTriple* models;
};

double linear_mean(const FittedGlm& fit, const DesignTerms& terms, const RowContext& ctx, double* scratch) {
  terms.fill(ctx, scratch);
  return predict_mean(fit, scratch);
}

// Draws interval values into path for a live subject; returns false if the
// path must be aborted.
bool draw_interval(const CompiledStage& stage, RowContext& ctx, double* l_out, double& y_out, int& d_out,
                   RandomStream& rng, double* scratch, int p, int max_redraws, int& redraws) {
  const ModelTriple& m = *stage.models;
  for (int attempt = 0;; ++attempt) {
    for (int q = 0; q < p; ++q) {
      const FittedGlm& cm = m.confounder[static_cast<std::size_t>(q)];
      const double mean = linear_mean(cm, stage.terms.conf, ctx, scratch);
      if (positive_mean(cm.family) && !(mean > 0.0)) return false;
      l_out[q] = sample_response(cm.family, mean, cm.dispersion, rng);
    }
    ctx.l = std::span<const double>(l_out, static_cast<std::size_t>(p));
    const double mu = linear_mean(m.cost, stage.terms.cost, ctx, scratch);
    if (positive_mean(m.cost.family) && !(mu > 0.0)) {
      if (attempt >= max_redraws) return false;
      ++redraws;
      continue;
    }
    y_out = sample_response(m.cost.family, mu, m.cost.dispersion, rng);
    break;
  }
  ctx.y = y_out;
  const double pd = linear_mean(m.death, stage.terms.death, ctx, scratch);
  d_out = draw_bernoulli(rng, pd) ? 1 : 0;
  return true;
}

void check_sizes(const StageTerms& t, const ModelTriple& m, const char* stage) {
  auto check = [&](const FittedGlm& g, const DesignTerms& d, const std::string& what) {
    if (g.coefficients.size() != static_cast<Eigen::Index>(d.columns()))
      throw InputError(std::string(stage) + " " + what + " model has " + std::to_string(g.coefficients.size()) +
                       " coefficients but its design has " + std::to_string(d.columns()) + " columns");
  };
  for (const auto& g : m.confounder) check(g, t.conf, "confounder");
  check(m.cost, t.cost, "cost");
  check(m.death, t.death, "death");
}

int max_columns(const StageTerms& t) { return std::max({t.conf.columns(), t.cost.columns(), t.death.columns()}); }

class PathSimulator {
 public:
  PathSimulator(const SequentialModelSet& models, const TreatmentRegime& regime, int max_redraws)
      : models_(models), regime_(regime), max_redraws_(max_redraws) {
    base_ = {compile(models.spec.baseline, models.confounder_dim), &models.theta1};
    if (models.theta) follow_ = {compile(models.spec.followup, models.confounder_dim), &*models.theta};
    check_sizes(base_.terms, models.theta1, "baseline");
    if (models.theta) check_sizes(follow_.terms, *models.theta, "follow-up");
    scratch_.resize(static_cast<std::size_t>(std::max(max_columns(base_.terms), models.theta ? max_columns(follow_.terms) : 0)));
  }

  void run(RandomStream& rng, SimulatedPath& path) {
    const int J = models_.J;
    const int p = models_.confounder_dim;
    path.l.assign(static_cast<std::size_t>(J * p), 0.0);
    path.y.assign(static_cast<std::size_t>(J), 0.0);
    path.d.assign(static_cast<std::size_t>(J), 0);
    path.aborted = false;
    path.redraws = 0;
    bool dead = false;
    for (int j = 0; j < J; ++j) {
      if (dead) {
        path.d[static_cast<std::size_t>(j)] = 1;
        continue;
      }
      RowContext ctx;
      ctx.a = regime_.assignments[static_cast<std::size_t>(j)];
      if (j > 0) {
        ctx.l_prev = std::span<const double>(path.l.data() + (j - 1) * p, static_cast<std::size_t>(p));
        ctx.a_prev = regime_.assignments[static_cast<std::size_t>(j - 1)];
        ctx.y_prev = path.y[static_cast<std::size_t>(j - 1)];
      }
      const CompiledStage& stage = j == 0 ? base_ : follow_;
      int d = 0;
      if (!draw_interval(stage, ctx, path.l.data() + j * p, path.y[static_cast<std::size_t>(j)], d, rng,
                         scratch_.data(), p, max_redraws_, path.redraws)) {
        path.aborted = true;
        return;
      }
      path.d[static_cast<std::size_t>(j)] = d;
      dead = d == 1;
    }
  }

 private:
  const SequentialModelSet& models_;
  const TreatmentRegime& regime_;
  int max_redraws_;
  CompiledStage base_{};
  CompiledStage follow_{};
  std::vector<double> scratch_;
};

struct ChunkStats {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  std::vector<double> interval_sums;
  std::size_t aborted = 0;
  std::size_t redraws = 0;
};

}  // namespace

void simulate_path(const SequentialModelSet& models, const TreatmentRegime& regime, RandomStream& rng,
                   SimulatedPath& path, int max_redraws) {
  validate_regime(regime, models.J);
  PathSimulator sim(models, regime, max_redraws);
  sim.run(rng, path);
}

GComputeResult g_compute_mean(const SequentialModelSet& models, const TreatmentRegime& regime, std::size_t R,
                              std::uint64_t stream_key, const GComputeOptions& options) {
  validate_regime(regime, models.J);
  if (R < 1) throw InputError("Monte-Carlo iteration count R must be >= 1");
  if (models.J > 1 && !models.theta) throw InputError("model set lacks follow-up models for J > 1");
  const std::size_t chunk = std::max<std::size_t>(options.chunk_size, 1);
  const std::size_t n_chunks = (R + chunk - 1) / chunk;
  const auto J = static_cast<std::size_t>(models.J);

  std::vector<ChunkStats> stats(n_chunks);
  parallel_for(n_chunks, options.threads, [&](std::size_t c) {
    PathSimulator sim(models, regime, options.max_redraws);
    SimulatedPath path;
    ChunkStats& st = stats[c];
    st.interval_sums.assign(J, 0.0);
    const std::size_t end = std::min(R, (c + 1) * chunk);
    for (std::size_t r = c * chunk; r < end; ++r) {
      RandomStream rng(stream_key, r);
      sim.run(rng, path);
      st.redraws += static_cast<std::size_t>(path.redraws);
      if (path.aborted) {
        ++st.aborted;
        continue;
      }
      double total = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        total += path.y[j];
        st.interval_sums[j] += path.y[j];
      }
      ++st.n;
      const double delta = total - st.mean;
      st.mean += delta / static_cast<double>(st.n);
      st.m2 += delta * (total - st.mean);
    }
  });

  GComputeResult out;
  out.interval_means.assign(J, 0.0);
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (const auto& st : stats) {
    out.aborted += st.aborted;
    out.redraws += st.redraws;
    for (std::size_t j = 0; j < J; ++j) out.interval_means[j] += st.interval_sums[j];
    if (st.n == 0) continue;
    const std::size_t total_n = n + st.n;
    const double delta = st.mean - mean;
    mean += delta * static_cast<double>(st.n) / static_cast<double>(total_n);
    m2 += st.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(st.n) / static_cast<double>(total_n);
    n = total_n;
  }
  if (static_cast<double>(out.aborted) > options.max_abort_fraction * static_cast<double>(R))
    throw DomainError("g-computation: " + std::to_string(out.aborted) + " of " + std::to_string(R) +
                      " paths left the support of the fitted models");
  if (n == 0) throw DomainError("g-computation: no completed Monte-Carlo paths");
  for (auto& v : out.interval_means) v /= static_cast<double>(n);
  out.paths = n;
  out.mu_hat = mean;
  out.mc_se = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
  return out;
}

DeltaEstimate estimate_delta(const SequentialModelSet& models, const TreatmentRegime& regime_a,
                             const TreatmentRegime& regime_b, std::size_t R, std::uint64_t seed,
                             const DeltaOptions& options) {
  const std::uint64_t key_a = derive_key(seed, {stream_tag::kMonteCarlo, 0});
  const std::uint64_t key_b = derive_key(seed, {stream_tag::kMonteCarlo, options.common_random_numbers ? 0u : 1u});
  DeltaEstimate out;
  out.mu_a = g_compute_mean(models, regime_a, R, key_a, options.gcompute);
  out.mu_b = g_compute_mean(models, regime_b, R, key_b, options.gcompute);
  out.delta = out.mu_a.mu_hat - out.mu_b.mu_hat;
  out.mc_se = std::hypot(out.mu_a.mc_se, out.mu_b.mc_se);
  return out;
}

namespace {

nlohmann::json triple_json(const ModelTriple& t) {
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& c : t.confounder) conf.push_back(to_json(c));
  return {{"confounder", conf}, {"cost", to_json(t.cost)}, {"death", to_json(t.death)}};
}

nlohmann::json gcompute_json(const GComputeResult& r) {
  return {{"mu_hat", r.mu_hat},       {"mc_se", r.mc_se},     {"interval_means", r.interval_means},
          {"paths", r.paths},         {"aborted", r.aborted}, {"redraws", r.redraws}};
}

}  // namespace

nlohmann::json to_json(const SequentialModelSet& models) {
  nlohmann::json j{{"J", models.J},
                   {"confounder_dim", models.confounder_dim},
                   {"markov", models.spec.markov},
                   {"n_baseline_obs", models.n_baseline_obs},
                   {"n_followup_obs", models.n_followup_obs},
                   {"theta1", triple_json(models.theta1)}};
  j["theta"] = models.theta ? triple_json(*models.theta) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const DeltaEstimate& estimate) {
  return {{"delta", estimate.delta},
          {"mc_se", estimate.mc_se},
          {"mu_a", gcompute_json(estimate.mu_a)},
          {"mu_b", gcompute_json(estimate.mu_b)}};
}

}  // namespace nestedg

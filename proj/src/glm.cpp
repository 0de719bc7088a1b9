#include "nestedg/glm.hpp"

#include <cmath>
#include <limits>

namespace nestedg {

std::string_view to_string(Family f) noexcept {
  switch (f) {
    case Family::normal: return "normal";
    case Family::gamma: return "gamma";
    case Family::inverse_gaussian: return "inverse_gaussian";
    case Family::bernoulli: return "bernoulli";
  }
  return "unknown";
}

std::string_view to_string(Link l) noexcept { return l == Link::identity ? "identity" : "logit"; }

Family parse_family(std::string_view name) {
  if (name == "normal") return Family::normal;
  if (name == "gamma") return Family::gamma;
  if (name == "inverse_gaussian") return Family::inverse_gaussian;
  if (name == "bernoulli") return Family::bernoulli;
  throw InputError("unknown family '" + std::string(name) +
                   "' (expected normal, gamma, inverse_gaussian or bernoulli)");
}

Link canonical_link(Family f) noexcept { return f == Family::bernoulli ? Link::logit : Link::identity; }

void validate_spec(const GlmSpec& spec) {
  if (spec.link != canonical_link(spec.family))
    throw InputError("family " + std::string(to_string(spec.family)) + " cannot be paired with the " +
                     std::string(to_string(spec.link)) + " link");
}

GlmSpec make_spec(Family family, std::vector<std::string> predictors) {
  return GlmSpec{family, canonical_link(family), std::move(predictors)};
}

double variance_function(Family family, double mean) noexcept {
  switch (family) {
    case Family::normal: return 1.0;
    case Family::gamma: return mean * mean;
    case Family::inverse_gaussian: return mean * mean * mean;
    case Family::bernoulli: return mean * (1.0 - mean);
  }
  return 1.0;
}

namespace {

bool positive_mean_family(Family f) noexcept { return f == Family::gamma || f == Family::inverse_gaussian; }

// Working weights and mean for the current linear predictor. For the logit
// link V(mu) g'(mu)^2 = 1 / (mu (1 - mu)); for identity it is V(mu).
struct Working {
  Eigen::VectorXd mu;
  Eigen::VectorXd w;
  Eigen::VectorXd z;
};

Working working_response(Family family, const Eigen::VectorXd& eta, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& prior) {
  const Eigen::Index n = eta.size();
  Working out{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (family == Family::bernoulli) {
      const double mu = expit(eta[i]);
      const double v = std::max(mu * (1.0 - mu), 1e-300);
      out.mu[i] = mu;
      out.w[i] = prior[i] * v;
      out.z[i] = eta[i] + (y[i] - mu) / v;
    } else {
      out.mu[i] = eta[i];
      out.w[i] = prior[i] / variance_function(family, eta[i]);
      out.z[i] = y[i];
    }
  }
  return out;
}

// Score contribution divisor V(mu) g'(mu); equals 1 for logit.
double score_divisor(Family family, double mu) noexcept {
  return family == Family::bernoulli ? 1.0 : variance_function(family, mu);
}

double mean_from_eta(Family family, double eta) noexcept { return family == Family::bernoulli ? expit(eta) : eta; }

Eigen::VectorXd weighted_solve(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, const Eigen::VectorXd& z) {
  const Eigen::MatrixXd Xw = X.array().colwise() * w.array();
  const Eigen::MatrixXd xtwx = X.transpose() * Xw;
  const Eigen::VectorXd xtwz = Xw.transpose() * z;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw SingularDesignError("weighted normal equations are not positive definite");
  Eigen::VectorXd beta = ldlt.solve(xtwz);
  if (!beta.allFinite()) throw SingularDesignError("weighted normal equations produced non-finite coefficients");
  return beta;
}

bool all_means_positive(const Eigen::VectorXd& eta, const Eigen::VectorXd& prior) {
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    if (prior[i] > 0.0 && !(eta[i] > 0.0)) return false;
  return true;
}

}  // namespace

double score_residual_norm(Family family, const Eigen::VectorXd& coefficients, const Eigen::MatrixXd& design,
                           const Eigen::VectorXd& response, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd eta = design * coefficients;
  Eigen::VectorXd r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double w = weights.size() == 0 ? 1.0 : weights[i];
    const double mu = mean_from_eta(family, eta[i]);
    if (w == 0.0) {
      r[i] = 0.0;
      continue;
    }
    if (positive_mean_family(family) && !(mu > 0.0)) return std::numeric_limits<double>::infinity();
    r[i] = w * (response[i] - mu) / score_divisor(family, mu);
  }
  return (design.transpose() * r).cwiseAbs().maxCoeff();
}

double score_residual_norm(const FittedGlm& fit, const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                           const Eigen::VectorXd& weights) {
  return score_residual_norm(fit.family, fit.coefficients, design, response, weights);
}

FittedGlm fit_glm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GlmSpec& spec,
                  const Eigen::VectorXd& weights, const GlmOptions& options) {
  validate_spec(spec);
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (y.size() != n) throw InputError("response length does not match design rows");
  if (weights.size() != 0 && weights.size() != n) throw InputError("weight length does not match design rows");
  if (p == 0) throw SingularDesignError("design has no columns");

  const Eigen::VectorXd prior = weights.size() == 0 ? Eigen::VectorXd::Ones(n) : weights;
  Eigen::Index n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(prior[i] >= 0.0) || !std::isfinite(prior[i])) throw InputError("weights must be finite and non-negative");
    if (prior[i] == 0.0) continue;
    ++n_pos;
    if (!std::isfinite(y[i]) || !X.row(i).allFinite()) throw InputError("non-finite value in design or response");
    if (positive_mean_family(spec.family) && !(y[i] > 0.0))
      throw DomainError(std::string(to_string(spec.family)) + " response must be strictly positive (row " +
                        std::to_string(i) + ", y = " + std::to_string(y[i]) + ")");
    if (spec.family == Family::bernoulli && y[i] != 0.0 && y[i] != 1.0)
      throw DomainError("bernoulli response must be 0 or 1");
  }
  if (n_pos == 0) throw InputError("all weights are zero");
  if (n_pos <= p)
    throw SingularDesignError("need more observations than coefficients (n = " + std::to_string(n_pos) +
                              ", p = " + std::to_string(p) + ")");
  {
    const Eigen::MatrixXd scaled = X.array().colwise() * prior.array().sqrt();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    if (qr.rank() < p)
      throw SingularDesignError("design is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                                std::to_string(p) + ")");
  }

  FittedGlm fit;
  fit.family = spec.family;
  fit.link = spec.link;
  fit.predictors = spec.predictors;
  fit.n_obs = static_cast<std::size_t>(n_pos);

  // Starting values: mu = y for the identity-link families, (y + 1/2) / 2 for
  // bernoulli; both give a first weighted least-squares step.
  Eigen::VectorXd beta;
  if (spec.family == Family::bernoulli) {
    Eigen::VectorXd eta0(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = (y[i] + 0.5) / 2.0;
      eta0[i] = std::log(mu / (1.0 - mu));
    }
    const Working w0 = working_response(spec.family, eta0, y, prior);
    beta = weighted_solve(X, w0.w, w0.z);
  } else {
    Eigen::VectorXd w0(n);
    for (Eigen::Index i = 0; i < n; ++i)
      w0[i] = prior[i] == 0.0 ? 0.0 : prior[i] / variance_function(spec.family, y[i]);
    beta = weighted_solve(X, w0, y);
    if (positive_mean_family(spec.family) && !all_means_positive(X * beta, prior)) {
      // Fall back to an intercept-only start if there is a constant column.
      Eigen::Index intercept = -1;
      for (Eigen::Index c = 0; c < p && intercept < 0; ++c)
        if ((X.col(c).array() == 1.0).all()) intercept = c;
      if (intercept < 0) throw DomainError("cannot find starting values with positive fitted means");
      beta = Eigen::VectorXd::Zero(p);
      beta[intercept] = (prior.array() * y.array()).sum() / prior.sum();
    }
  }

  const double score_tol = options.score_tolerance * static_cast<double>(n_pos);
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= options.max_iterations; ++iter) {
    const Eigen::VectorXd eta = X * beta;
    const Working wk = working_response(spec.family, eta, y, prior);
    Eigen::VectorXd next;
    try {
      next = weighted_solve(X, wk.w, wk.z);
    } catch (const SingularDesignError&) {
      fit.coefficients = beta;
      fit.iterations = iter;
      throw NonConvergenceError("IRLS weights degenerated (possible separation)", fit);
    }
    if (positive_mean_family(spec.family)) {
      int halvings = 0;
      while (!all_means_positive(X * next, prior)) {
        if (++halvings > options.max_halvings) {
          fit.coefficients = beta;
          fit.iterations = iter;
          throw NonConvergenceError("step-halving could not keep fitted means positive", fit);
        }
        next = 0.5 * (next + beta);
      }
    }
    const double change = (next - beta).cwiseAbs().maxCoeff() / std::max(next.cwiseAbs().maxCoeff(), 1.0);
    beta = std::move(next);
    if (change < options.relative_tolerance) {
      converged = true;
      break;
    }
    // The score criterion is not used for bernoulli: under separation the score
    // vanishes while the coefficients diverge.
    if (spec.family != Family::bernoulli &&
        score_residual_norm(spec.family, beta, X, y, prior) < score_tol) {
      converged = true;
      break;
    }
  }
  fit.coefficients = beta;
  fit.iterations = std::min(iter, options.max_iterations);
  if (!converged)
    throw NonConvergenceError("IRLS did not converge in " + std::to_string(options.max_iterations) + " iterations",
                              fit);

  const Eigen::VectorXd eta = X * beta;
  if (spec.family == Family::bernoulli) {
    if (eta.cwiseAbs().maxCoeff() > options.separation_eta)
      throw NonConvergenceError("fitted probabilities numerically 0 or 1 (separation)", fit);
    fit.dispersion = 1.0;
  } else {
    double pearson = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (prior[i] == 0.0) continue;
      const double r = y[i] - eta[i];
      pearson += prior[i] * r * r / variance_function(spec.family, eta[i]);
    }
    fit.dispersion = pearson / static_cast<double>(n_pos - p);
  }
  fit.converged = true;
  return fit;
}

double predict_mean(const FittedGlm& fit, const Eigen::Ref<const Eigen::VectorXd>& row) {
  if (row.size() != fit.coefficients.size())
    throw InputError("prediction row has " + std::to_string(row.size()) + " entries, model has " +
                     std::to_string(fit.coefficients.size()) + " coefficients");
  const double eta = row.dot(fit.coefficients);
  return fit.link == Link::logit ? expit(eta) : eta;
}

double predict_mean(const FittedGlm& fit, const double* row) noexcept {
  double eta = 0.0;
  for (Eigen::Index k = 0; k < fit.coefficients.size(); ++k) eta += row[k] * fit.coefficients[k];
  return fit.link == Link::logit ? expit(eta) : eta;
}

double sample_response(Family family, double mean, double dispersion, RandomStream& rng) {
  switch (family) {
    case Family::normal:
      return draw_normal(rng, mean, dispersion);
    case Family::gamma:
      if (!(mean > 0.0)) throw DomainError("gamma mean must be positive, got " + std::to_string(mean));
      return draw_gamma(rng, mean, dispersion);
    case Family::inverse_gaussian:
      if (!(mean > 0.0)) throw DomainError("inverse Gaussian mean must be positive, got " + std::to_string(mean));
      return draw_inverse_gaussian(rng, mean, 1.0 / dispersion);
    case Family::bernoulli:
      if (!(mean >= 0.0 && mean <= 1.0)) throw DomainError("bernoulli probability outside [0, 1]");
      return draw_bernoulli(rng, mean) ? 1.0 : 0.0;
  }
  return mean;
}

nlohmann::json to_json(const FittedGlm& fit) {
  return nlohmann::json{
      {"family", std::string(to_string(fit.family))},
      {"link", std::string(to_string(fit.link))},
      {"predictors", fit.predictors},
      {"coefficients", std::vector<double>(fit.coefficients.data(), fit.coefficients.data() + fit.coefficients.size())},
      {"dispersion", fit.dispersion},
      {"n_obs", fit.n_obs},
      {"converged", fit.converged},
      {"iterations", fit.iterations},
  };
}

}  // namespace nestedg

#pragma once

#include <Eigen/Dense>
#include "json.hpp"
#include <string>
#include <string_view>
#include <vector>

#include "nestedg/error.hpp"
#include "nestedg/random.hpp"

namespace nestedg {

enum class Family { normal, gamma, inverse_gaussian, bernoulli };
enum class Link { identity, logit };

std::string_view to_string(Family f) noexcept;
std::string_view to_string(Link l) noexcept;
/// Parses "normal", "gamma", "inverse_gaussian", "bernoulli"; throws InputError.
Family parse_family(std::string_view name);

/// The link this engine pairs with a family: logit for bernoulli, identity
/// otherwise.
Link canonical_link(Family f) noexcept;

struct GlmSpec {
  Family family = Family::normal;
  Link link = Link::identity;
  std::vector<std::string> predictors;  // design-column names, informational
};

/// Throws InputError for family/link pairs outside {bernoulli-logit,
/// continuous-identity}.
void validate_spec(const GlmSpec& spec);
GlmSpec make_spec(Family family, std::vector<std::string> predictors = {});

struct FittedGlm {
  Family family = Family::normal;
  Link link = Link::identity;
  Eigen::VectorXd coefficients;
  double dispersion = 1.0;  // Pearson chi^2 / (n - p); fixed at 1 for bernoulli
  std::size_t n_obs = 0;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> predictors;
};

/// IRLS did not reach a fixed point; carries the last iterate.
class NonConvergenceError : public ModelError {
 public:
  NonConvergenceError(const std::string& what, FittedGlm last) : ModelError(what), last_(std::move(last)) {}
  const char* class_name() const noexcept override { return "NonConvergenceError"; }
  const FittedGlm& last_iterate() const noexcept { return last_; }

 private:
  FittedGlm last_;
};

struct GlmOptions {
  int max_iterations = 50;
  double relative_tolerance = 1e-8;  // max |delta beta| / max(|beta|, 1)
  double score_tolerance = 1e-6;     // per observation, on the score max-norm
  int max_halvings = 100;
  double separation_eta = 30.0;      // |linear predictor| beyond this flags separation
};

/// Fits a GLM by iteratively reweighted least squares (Fisher scoring).
/// `weights` may be empty (unit weights). Identity-link gamma and inverse
/// Gaussian fits halve steps until every fitted mean is strictly positive.
FittedGlm fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const GlmSpec& spec,
                  const Eigen::VectorXd& weights = Eigen::VectorXd{}, const GlmOptions& options = {});

/// Max-norm of the (quasi-)score sum_i w_i x_i (y_i - mu_i) / (V(mu_i) g'(mu_i))
/// at the fitted coefficients.
double score_residual_norm(const FittedGlm& fit, const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                           const Eigen::VectorXd& weights = Eigen::VectorXd{});
double score_residual_norm(Family family, const Eigen::VectorXd& coefficients, const Eigen::MatrixXd& design,
                           const Eigen::VectorXd& response, const Eigen::VectorXd& weights = Eigen::VectorXd{});

/// Identity link: x'b. Logit link: expit(x'b).
double predict_mean(const FittedGlm& fit, const Eigen::Ref<const Eigen::VectorXd>& row);
double predict_mean(const FittedGlm& fit, const double* row) noexcept;

/// Variance function V(mu) (without dispersion).
double variance_function(Family family, double mean) noexcept;

/// One draw with E = mean and Var = phi * V(mean). For bernoulli `mean` is the
/// success probability. Throws DomainError for a mean outside the family's
/// support.
double sample_response(Family family, double mean, double dispersion, RandomStream& rng);

inline double expit(double eta) noexcept {
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

nlohmann::json to_json(const FittedGlm& fit);

}  // namespace nestedg

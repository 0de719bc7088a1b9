#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nestedg/glm.hpp"
#include "nestedg/panel.hpp"

namespace nestedg {

/// Right-continuous, non-increasing step function equal to 1 before the first
/// jump.
struct StepSurvival {
  std::vector<double> jump_times;  // strictly increasing
  std::vector<double> values;      // value on [jump_times[k], jump_times[k+1])

  double at(double t) const noexcept;
  /// lim_{s -> t-} K(s).
  double left_limit(double t) const noexcept;
};

/// Product-limit estimate of P(T^C > t) from (X_i, 1 - delta_tilde_i). At tied
/// times the subjects whose X is a death (or administrative end) stay in the
/// risk set for the censoring events.
StepSurvival km_censoring_survival(std::span<const double> x, std::span<const int> censor_event);

/// KM censoring survival for a cohort from its case times.
StepSurvival km_censoring_survival(const Cohort& cohort);

enum class IttMethod { complete_case, partitioned, iptw_partitioned };
std::string_view to_string(IttMethod m) noexcept;

struct IttEstimate {
  IttMethod method = IttMethod::complete_case;
  double delta_itt = 0.0;
  Eigen::VectorXd zeta;             // (mu_0, Delta_ITT, zeta_1); summed over intervals when partitioned
  std::vector<double> per_interval;  // empty for complete_case
  std::size_t contributors = 0;      // complete cases, or sum over intervals of delta_ij
};

/// Baseline covariates W_i = (1, A_i1, L_i1). The treatment indicator is
/// column 1 in every design these estimators accept.
Eigen::MatrixXd baseline_design(const Cohort& cohort);

/// Cost of interval j (1-based): Y_j, or 0 after death. Requires the interval
/// to be observed.
double interval_cost(const SubjectPanel& subject, int j);

/// Complete-case IPCW: solves sum_{delta_i = 1} W_i (Y_i - W_i' zeta) / K(T_i-) = 0.
IttEstimate ipcw_complete_case(const Cohort& cohort, const Eigen::MatrixXd& W);

/// Partitioned IPCW: one weighted solve per interval with T_ij = min(T^D, tau_j),
/// delta_ij = 1(T^C >= T_ij); Delta_ITT sums the interval effects.
IttEstimate partitioned_ipcw(const Cohort& cohort, const Eigen::MatrixXd& W);

/// Baseline propensity model logit P(A_1 = 1) = psi_0 + L_1' psi.
FittedGlm fit_propensity(const Cohort& cohort);
std::vector<double> propensity_scores(const Cohort& cohort, const FittedGlm& propensity);

/// Partitioned IPCW with each subject's equations multiplied by
/// A/pi + (1 - A)/(1 - pi).
IttEstimate iptw_partitioned(const Cohort& cohort, const Eigen::MatrixXd& W, const FittedGlm& propensity);
IttEstimate iptw_partitioned(const Cohort& cohort, const Eigen::MatrixXd& W, std::span<const double> pi);

nlohmann::json to_json(const IttEstimate& estimate);

}  // namespace nestedg

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nestedg {

/// J equal-width intervals 0 = tau_0 < ... < tau_J = tau.
struct IntervalGrid {
  int J = 1;
  double tau = 1.0;

  /// Right boundary tau_j of interval j (tau_0 = 0).
  double boundary(int j) const noexcept { return tau * static_cast<double>(j) / static_cast<double>(J); }
};

/// Throws InputError unless J >= 1 and tau > 0.
IntervalGrid make_grid(int J, double tau);

/// One interval in observation order (C, L, A, Y, D). Fields that were not
/// observed (after censoring, or L/A after death) are empty.
struct IntervalRecord {
  int c = 0;
  std::vector<double> l;
  std::optional<int> a;
  std::optional<double> y;
  std::optional<int> d;

  friend bool operator==(const IntervalRecord&, const IntervalRecord&) = default;
};

struct SubjectPanel {
  std::string id;
  std::vector<IntervalRecord> records;  // records[0] is interval 1

  friend bool operator==(const SubjectPanel&, const SubjectPanel&) = default;
};

struct Cohort {
  std::vector<SubjectPanel> subjects;
  IntervalGrid grid;
  int confounder_dim = 1;

  friend bool operator==(const Cohort& a, const Cohort& b) {
    return a.subjects == b.subjects && a.grid.J == b.grid.J && a.grid.tau == b.grid.tau &&
           a.confounder_dim == b.confounder_dim;
  }
};

// Interval indices below are 1-based, matching the data format.

/// First interval k with D_k = 1, if any (ignoring anything after censoring).
std::optional<int> death_interval(const SubjectPanel& subject);

/// Number of leading uncensored intervals, J_i.
int observed_intervals(const SubjectPanel& subject);

/// Interval k at whose start the subject was censored, if any. A live
/// subject whose history stops before J is treated as censored at J_i + 1.
std::optional<int> censor_interval(const SubjectPanel& subject, int J);

/// Dead before censoring, or followed uncensored through interval J.
bool is_complete_case(const SubjectPanel& subject, int J);

struct Violation {
  std::string subject_id;
  int interval = 0;  // 0 when the rule is not tied to an interval
  std::string rule;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<Violation> warnings;  // e.g. negative costs; never fatal

  bool ok() const noexcept { return violations.empty(); }
};

/// Structural checks on the observed-data ordering. Violations are returned as
/// data; this never throws.
ValidationReport validate_cohort(const Cohort& cohort);

/// Sum of interval costs for a complete case. Throws DomainError for a
/// censored subject.
double cumulative_cost(const SubjectPanel& subject, int J);

/// Time-scale quantities used by the inverse-weighted estimators.
struct CaseTimes {
  double death_time;   // T^D = tau_k for death after interval k; +inf if unobserved
  double censor_time;  // T^C = tau_{k-1} for censoring at start of k; +inf if none
  double T;            // min(T^D, tau)
  bool delta;          // 1(T^C >= T): complete cost data
  double X;            // min(T^D, T^C, tau)
  bool delta_tilde;    // death observed
};

std::vector<CaseTimes> complete_case_flags(const Cohort& cohort);
CaseTimes case_times(const SubjectPanel& subject, const IntervalGrid& grid);

/// Long-format CSV: header `id,j,c,l_1..l_p,a,y,d`, one row per
/// (subject, interval), empty cells for unobserved fields.
Cohort read_cohort_csv(std::istream& in, std::optional<IntervalGrid> grid = std::nullopt);
Cohort read_cohort_csv_file(const std::string& path, std::optional<IntervalGrid> grid = std::nullopt);
void write_cohort_csv(std::ostream& out, const Cohort& cohort);

}  // namespace nestedg

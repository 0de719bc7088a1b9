#include "nestedg/panel.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include "nestedg/error.hpp"

namespace nestedg {

IntervalGrid make_grid(int J, double tau) {
  if (J < 1) throw InputError("interval count J must be >= 1, got " + std::to_string(J));
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("horizon tau must be positive and finite");
  return IntervalGrid{J, tau};
}

std::optional<int> death_interval(const SubjectPanel& subject) {
  int k = 0;
  for (const auto& rec : subject.records) {
    ++k;
    if (rec.c == 1) return std::nullopt;
    if (rec.d && *rec.d == 1) return k;
  }
  return std::nullopt;
}

int observed_intervals(const SubjectPanel& subject) {
  int k = 0;
  for (const auto& rec : subject.records) {
    if (rec.c != 0) break;
    ++k;
  }
  return k;
}

std::optional<int> censor_interval(const SubjectPanel& subject, int J) {
  int k = 0;
  for (const auto& rec : subject.records) {
    ++k;
    if (rec.c == 1) return k;
    if (rec.d && *rec.d == 1) return std::nullopt;
  }
  if (k < J) return k + 1;
  return std::nullopt;
}

bool is_complete_case(const SubjectPanel& subject, int J) { return !censor_interval(subject, J).has_value(); }

ValidationReport validate_cohort(const Cohort& cohort) {
  ValidationReport report;
  const int J = cohort.grid.J;
  auto flag = [&](const SubjectPanel& s, int k, std::string rule, std::string detail) {
    report.violations.push_back({s.id, k, std::move(rule), std::move(detail)});
  };
  if (cohort.subjects.empty()) report.violations.push_back({"", 0, "no subjects", "cohort is empty"});

  for (const auto& s : cohort.subjects) {
    if (s.records.empty()) {
      flag(s, 0, "empty history", "subject has no interval records");
      continue;
    }
    if (static_cast<int>(s.records.size()) > J)
      flag(s, J + 1, "interval beyond horizon", "subject has " + std::to_string(s.records.size()) + " records, J = " + std::to_string(J));
    if (s.records.front().c == 1) flag(s, 1, "censored at entry", "C_1 = 1");

    bool dead = false;
    int death_at = 0;
    for (std::size_t idx = 0; idx < s.records.size(); ++idx) {
      const auto& rec = s.records[idx];
      const int k = static_cast<int>(idx) + 1;
      if (rec.c != 0 && rec.c != 1) {
        flag(s, k, "invalid indicator", "C must be 0 or 1");
        break;
      }
      if (rec.c == 1) break;  // later fields are ignored
      if (dead) {
        if (rec.y && *rec.y != 0.0)
          flag(s, k, "cost after death", "Y = " + std::to_string(*rec.y) + " after death in interval " + std::to_string(death_at));
        if (rec.d && *rec.d != 1) flag(s, k, "non-monotone death flag", "D returns to 0 after death");
        if (!rec.l.empty() || rec.a)
          report.warnings.push_back({s.id, k, "fields after death", "L/A after death are ignored"});
        continue;
      }
      if (static_cast<int>(rec.l.size()) != cohort.confounder_dim)
        flag(s, k, "ragged confounder dimension",
             "expected " + std::to_string(cohort.confounder_dim) + " confounders, got " + std::to_string(rec.l.size()));
      if (!rec.a) flag(s, k, "missing field", "A missing before censoring/death");
      else if (*rec.a != 0 && *rec.a != 1) flag(s, k, "invalid indicator", "A must be 0 or 1");
      if (!rec.y) flag(s, k, "missing field", "Y missing before censoring/death");
      else if (!std::isfinite(*rec.y)) flag(s, k, "non-finite cost", "Y is not finite");
      else if (*rec.y < 0.0) report.warnings.push_back({s.id, k, "negative cost", "Y = " + std::to_string(*rec.y)});
      for (double v : rec.l)
        if (!std::isfinite(v)) flag(s, k, "non-finite confounder", "L is not finite");
      if (!rec.d) {
        flag(s, k, "missing field", "D missing before censoring/death");
      } else if (*rec.d != 0 && *rec.d != 1) {
        flag(s, k, "invalid indicator", "D must be 0 or 1");
      } else if (*rec.d == 1) {
        dead = true;
        death_at = k;
      }
    }
  }
  return report;
}

double cumulative_cost(const SubjectPanel& subject, int J) {
  if (!is_complete_case(subject, J))
    throw DomainError("cumulative cost undefined for censored subject '" + subject.id + "'");
  double total = 0.0;
  const std::size_t n = std::min<std::size_t>(subject.records.size(), static_cast<std::size_t>(J));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& rec = subject.records[k];
    if (rec.c == 1) break;
    if (rec.y) total += *rec.y;
  }
  return total;
}

CaseTimes case_times(const SubjectPanel& subject, const IntervalGrid& grid) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  CaseTimes t{};
  const auto death = death_interval(subject);
  const auto censor = censor_interval(subject, grid.J);
  t.death_time = death ? grid.boundary(*death) : inf;
  t.censor_time = censor ? grid.boundary(*censor - 1) : inf;
  t.T = std::min(t.death_time, grid.tau);
  t.delta = t.censor_time >= t.T;
  t.X = std::min({t.death_time, t.censor_time, grid.tau});
  t.delta_tilde = death.has_value() && t.censor_time >= t.death_time;
  return t;
}

std::vector<CaseTimes> complete_case_flags(const Cohort& cohort) {
  std::vector<CaseTimes> out;
  out.reserve(cohort.subjects.size());
  for (const auto& s : cohort.subjects) out.push_back(case_times(s, cohort.grid));
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  for (auto& c : cells) {
    const auto first = c.find_first_not_of(" \t");
    const auto last = c.find_last_not_of(" \t");
    c = first == std::string::npos ? std::string{} : c.substr(first, last - first + 1);
  }
  return cells;
}

double parse_double(const std::string& s, std::size_t line, const std::string& column) {
  double v = 0.0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end)
    throw InputError("line " + std::to_string(line) + ": column '" + column + "' is not a number: '" + s + "'");
  return v;
}

int parse_int(const std::string& s, std::size_t line, const std::string& column) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw InputError("line " + std::to_string(line) + ": column '" + column + "' is not an integer: '" + s + "'");
  return v;
}

void write_double(std::ostream& out, double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.write(buf.data(), ptr - buf.data());
}

}  // namespace

Cohort read_cohort_csv(std::istream& in, std::optional<IntervalGrid> grid) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  if (line.find_first_not_of(" \t\r") == std::string::npos) throw InputError("no subjects: input is empty");

  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(header[i], i).second) throw InputError("duplicate CSV column '" + header[i] + "'");
  }
  for (const char* required : {"id", "j", "c", "a", "y", "d"})
    if (!col.count(required)) throw InputError(std::string("missing required CSV column '") + required + "'");
  int p = 0;
  while (col.count("l_" + std::to_string(p + 1))) ++p;
  if (p == 0) throw InputError("missing confounder columns l_1..l_p");
  if (header.size() != static_cast<std::size_t>(5 + p + 1))
    throw InputError("unexpected CSV columns; expected id,j,c,l_1..l_" + std::to_string(p) + ",a,y,d");

  std::vector<std::string> order;
  std::map<std::string, std::map<int, IntervalRecord>> rows;
  int max_j = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " cells, got " + std::to_string(cells.size()));
    const std::string& id = cells[col["id"]];
    if (id.empty()) throw InputError("line " + std::to_string(line_no) + ": empty subject id");
    const int j = parse_int(cells[col["j"]], line_no, "j");
    if (j < 1) throw InputError("line " + std::to_string(line_no) + ": interval index j must be >= 1");
    IntervalRecord rec;
    rec.c = cells[col["c"]].empty() ? 0 : parse_int(cells[col["c"]], line_no, "c");
    bool any_l = false, all_l = true;
    std::vector<double> l;
    for (int q = 1; q <= p; ++q) {
      const std::string name = "l_" + std::to_string(q);
      const auto& cell = cells[col[name]];
      if (cell.empty()) {
        all_l = false;
      } else {
        any_l = true;
        l.push_back(parse_double(cell, line_no, name));
      }
    }
    if (any_l && !all_l) throw InputError("line " + std::to_string(line_no) + ": partially missing confounder vector");
    rec.l = std::move(l);
    if (const auto& s = cells[col["a"]]; !s.empty()) rec.a = parse_int(s, line_no, "a");
    if (const auto& s = cells[col["y"]]; !s.empty()) rec.y = parse_double(s, line_no, "y");
    if (const auto& s = cells[col["d"]]; !s.empty()) rec.d = parse_int(s, line_no, "d");

    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    if (!it->second.emplace(j, std::move(rec)).second)
      throw InputError("line " + std::to_string(line_no) + ": duplicate row for subject '" + id + "', j = " + std::to_string(j));
    max_j = std::max(max_j, j);
  }
  if (order.empty()) throw InputError("no subjects: CSV has a header but no rows");

  Cohort cohort;
  cohort.confounder_dim = p;
  cohort.grid = grid ? make_grid(grid->J, grid->tau) : make_grid(max_j, static_cast<double>(max_j));
  if (max_j > cohort.grid.J)
    throw InputError("interval index " + std::to_string(max_j) + " exceeds J = " + std::to_string(cohort.grid.J));
  cohort.subjects.reserve(order.size());
  for (const auto& id : order) {
    SubjectPanel s;
    s.id = id;
    int expect = 1;
    for (auto& [j, rec] : rows[id]) {
      if (j != expect)
        throw InputError("subject '" + id + "': intervals must be contiguous from 1; missing j = " + std::to_string(expect));
      s.records.push_back(std::move(rec));
      ++expect;
    }
    cohort.subjects.push_back(std::move(s));
  }
  return cohort;
}

Cohort read_cohort_csv_file(const std::string& path, std::optional<IntervalGrid> grid) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open panel CSV '" + path + "'");
  return read_cohort_csv(in, grid);
}

void write_cohort_csv(std::ostream& out, const Cohort& cohort) {
  out << "id,j,c";
  for (int q = 1; q <= cohort.confounder_dim; ++q) out << ",l_" << q;
  out << ",a,y,d\n";
  for (const auto& s : cohort.subjects) {
    int j = 0;
    for (const auto& rec : s.records) {
      ++j;
      out << s.id << ',' << j << ',' << rec.c;
      for (int q = 0; q < cohort.confounder_dim; ++q) {
        out << ',';
        if (q < static_cast<int>(rec.l.size())) write_double(out, rec.l[static_cast<std::size_t>(q)]);
      }
      out << ',';
      if (rec.a) out << *rec.a;
      out << ',';
      if (rec.y) write_double(out, *rec.y);
      out << ',';
      if (rec.d) out << *rec.d;
      out << '\n';
    }
  }
}

}  // namespace nestedg

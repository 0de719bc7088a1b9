#include "cli.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "nestedg/comparators.hpp"
#include "nestedg/config.hpp"
#include "nestedg/format.hpp"
#include "nestedg/inference.hpp"
#include "nestedg/panel.hpp"
#include "nestedg/simulation.hpp"

#ifndef NESTEDG_VERSION
#define NESTEDG_VERSION "0.0.0"
#endif

namespace nestedg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

namespace {

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  double scale = 1.0;
  std::string out = ".";
  bool dry_run = false;
  std::string config_path;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf.data();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class OutputDir {
 public:
  explicit OutputDir(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw InputError("cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + (dir_ / name).string() + "'");
    out << content;
    if (!out) throw InputError("write failed for '" + (dir_ / name).string() + "'");
    if (name != "manifest.json") files_.push_back(name);
  }

  const std::vector<std::string>& files() const noexcept { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

// Loads the config (or defaults) and applies command-line overrides.
RunConfig resolve_config(CommonOptions& opt, std::string& bytes) {
  RunConfig cfg;
  if (!opt.config_path.empty()) {
    bytes = read_file(opt.config_path);
    json doc;
    try {
      doc = json::parse(bytes);
    } catch (const json::parse_error& e) {
      throw InputError("config '" + opt.config_path + "' is not valid JSON: " + e.what());
    }
    if (opt.seed) doc["seed"] = *opt.seed;
    if (opt.threads) doc["threads"] = *opt.threads;
    cfg = parse_run_config(doc, opt.scale);
  } else {
    json doc = json::object();
    if (opt.seed) doc["seed"] = *opt.seed;
    if (opt.threads) doc["threads"] = *opt.threads;
    cfg = parse_run_config(doc, opt.scale);
  }
  return cfg;
}

void write_manifest(OutputDir& dir, const std::string& command, const std::vector<std::string>& args,
                    const CommonOptions& opt, const RunConfig& cfg, const std::string& config_bytes,
                    const std::string& started, const json& extra) {
  json m{{"command", command},
         {"argv", args},
         {"software_version", NESTEDG_VERSION},
         {"config_path", opt.config_path.empty() ? json(nullptr) : json(opt.config_path)},
         {"config_digest", "sha256:" + sha256_hex(config_bytes)},
         {"seed", cfg.seed},
         {"threads", cfg.threads},
         {"scale", opt.scale},
         {"dry_run", opt.dry_run},
         {"started_utc", started},
         {"finished_utc", utc_now()},
         {"outputs", dir.files()}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  dir.write("manifest.json", m.dump(2) + "\n");
}

Cohort load_panel(const std::string& path, const EstimateConfig& est) {
  std::optional<IntervalGrid> grid;
  if (est.J || est.tau) {
    const int J = est.J.value_or(1);
    if (!est.J) throw InputError("estimate.tau given without estimate.J");
    grid = make_grid(J, est.tau.value_or(static_cast<double>(J)));
  }
  return read_cohort_csv_file(path, grid);
}

std::string describe(const Violation& v) {
  std::string s = "subject '" + v.subject_id + "'";
  if (v.interval > 0) s += ", interval " + std::to_string(v.interval);
  return s + ": " + v.rule + " (" + v.detail + ")";
}

void require_valid(const Cohort& cohort, std::ostream& out) {
  const ValidationReport rep = validate_cohort(cohort);
  for (const auto& w : rep.warnings) out << "warning: " << describe(w) << "\n";
  if (rep.ok()) return;
  std::string msg = std::to_string(rep.violations.size()) + " validation violation(s); first: " + rep.violations[0].rule;
  if (!rep.violations[0].subject_id.empty()) msg += " - " + describe(rep.violations[0]);
  throw InputError(msg);
}

std::string itt_csv(const std::vector<IttEstimate>& list, int J) {
  std::ostringstream out;
  out << "method,delta_itt,contributors";
  for (int j = 1; j <= J; ++j) out << ",delta_" << j;
  out << "\n";
  for (const auto& e : list) {
    out << to_string(e.method) << ',' << format_double(e.delta_itt) << ',' << e.contributors;
    for (int j = 0; j < J; ++j) {
      out << ',';
      if (static_cast<std::size_t>(j) < e.per_interval.size()) out << format_double(e.per_interval[static_cast<std::size_t>(j)]);
    }
    out << "\n";
  }
  return out.str();
}

int cmd_estimate(const std::vector<std::string>& args, CommonOptions& opt, const std::string& data_path,
                 std::ostream& out) {
  const std::string started = utc_now();
  std::string config_bytes;
  RunConfig cfg = resolve_config(opt, config_bytes);
  OutputDir dir(opt.out);
  const json extra{{"data_path", data_path}, {"data_digest", "sha256:" + sha256_hex(read_file(data_path))}};
  dir.write("resolved_config.json", to_json(cfg).dump(2) + "\n");
  if (opt.dry_run) {
    write_manifest(dir, "estimate", args, opt, cfg, config_bytes, started, extra);
    out << "dry run: wrote resolved config and manifest to " << opt.out << "\n";
    return kExitOk;
  }

  const EstimateConfig& est = cfg.estimate;
  const Cohort cohort = load_panel(data_path, est);
  require_valid(cohort, out);
  const int J = cohort.grid.J;
  const TreatmentRegime ra = est.regime_a.value_or(TreatmentRegime::constant(J, 1));
  const TreatmentRegime rb = est.regime_b.value_or(TreatmentRegime::constant(J, 0));
  out << "cohort: " << cohort.subjects.size() << " subjects, J = " << J << "\n";

  std::vector<IttEstimate> itts;
  for (Estimator e : est.estimators) {
    if (e == Estimator::nested_g) {
      BootstrapConfig bc;
      bc.B = est.B;
      bc.R = est.R;
      bc.seed = cfg.seed;
      bc.parallel_width = cfg.threads;
      bc.level = est.level;
      bc.delta0 = est.delta0;
      bc.common_random_numbers = est.common_random_numbers;
      const EffectReport report = bootstrap_delta(cohort, est.spec, ra, rb, bc);
      json j = to_json(report);
      j["estimator"] = "nested_g";
      j["regime_a"] = ra.assignments;
      j["regime_b"] = rb.assignments;
      j["models"] = to_json(fit_sequential_models(cohort, est.spec));
      dir.write("effect_report.json", j.dump(2) + "\n");
      dir.write("effect_report.csv", to_csv(report));
      out << "nested_g: delta = " << format_double(report.delta_hat) << ", se = " << format_double(report.se_hat)
          << ", " << format_double(100 * report.level) << "% CI [" << format_double(report.ci_low) << ", "
          << format_double(report.ci_high) << "], p = " << format_double(report.p_value) << "\n";
      continue;
    }
    const Eigen::MatrixXd W = baseline_design(cohort);
    if (e == Estimator::lin_partitioned) itts.push_back(partitioned_ipcw(cohort, W));
    else if (e == Estimator::lin_complete_case) itts.push_back(ipcw_complete_case(cohort, W));
    else itts.push_back(iptw_partitioned(cohort, W, fit_propensity(cohort)));
    out << to_string(e) << ": delta_itt = " << format_double(itts.back().delta_itt) << "\n";
  }
  if (!itts.empty()) {
    json arr = json::array();
    for (const auto& e : itts) arr.push_back(to_json(e));
    dir.write("itt_estimates.json", arr.dump(2) + "\n");
    dir.write("itt_estimates.csv", itt_csv(itts, J));
  }
  write_manifest(dir, "estimate", args, opt, cfg, config_bytes, started, extra);
  return kExitOk;
}

int cmd_simulate(const std::vector<std::string>& args, CommonOptions& opt, std::ostream& out) {
  const std::string started = utc_now();
  std::string config_bytes;
  RunConfig cfg = resolve_config(opt, config_bytes);
  OutputDir dir(opt.out);
  dir.write("resolved_config.json", to_json(cfg).dump(2) + "\n");
  if (opt.dry_run) {
    write_manifest(dir, "simulate", args, opt, cfg, config_bytes, started, json::object());
    out << "dry run: wrote resolved config and manifest to " << opt.out << "\n";
    return kExitOk;
  }
  std::vector<StudyRow> rows;
  std::string reps_csv;
  json truths = json::array();
  for (const auto& scenario : cfg.scenarios) {
    out << "scenario " << scenario.scenario << ": " << scenario.reps << " reps, N = " << scenario.dgp.N
        << ", R = " << scenario.R << ", B = " << scenario.B << std::endl;
    const StudyResult res = run_study(scenario);
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
    std::string part = study_reps_csv(scenario.scenario, res.reps);
    if (!reps_csv.empty()) part.erase(0, part.find('\n') + 1);
    reps_csv += part;
    truths.push_back({{"scenario", scenario.scenario},
                      {"true_mu_a", res.true_mu_a},
                      {"true_mu_b", res.true_mu_b},
                      {"true_delta", res.true_delta}});
    for (const auto& r : res.rows)
      out << "  " << r.estimator << (r.fit_family.empty() ? "" : "/" + r.fit_family)
          << ": mean = " << format_double(r.mean_estimate) << ", %bias = " << format_double(r.pct_bias)
          << ", mcse = " << format_double(r.mcse) << ", se = " << format_double(r.mean_se_hat)
          << ", coverage = " << format_double(r.coverage) << "\n";
  }
  dir.write("study_summary.csv", study_summary_csv(rows));
  dir.write("study_reps.csv", reps_csv);
  dir.write("study_truth.json", truths.dump(2) + "\n");
  write_manifest(dir, "simulate", args, opt, cfg, config_bytes, started, json::object());
  return kExitOk;
}

int cmd_trajectories(const std::vector<std::string>& args, CommonOptions& opt, std::ostream& out) {
  const std::string started = utc_now();
  std::string config_bytes;
  RunConfig cfg = resolve_config(opt, config_bytes);
  OutputDir dir(opt.out);
  dir.write("resolved_config.json", to_json(cfg).dump(2) + "\n");
  if (opt.dry_run) {
    write_manifest(dir, "trajectories", args, opt, cfg, config_bytes, started, json::object());
    return kExitOk;
  }
  const Cohort cohort = generate_cohort(cfg.dgp, cfg.threads);
  const int J = cohort.grid.J;
  std::ostringstream traj;
  traj << "id,j,cumulative_cost,dead,censored\n";
  std::vector<std::vector<double>> at(static_cast<std::size_t>(J));
  for (const auto& s : cohort.subjects) {
    const auto censor = censor_interval(s, J);
    const auto death = death_interval(s);
    double total = 0.0;
    for (int j = 1; j <= J; ++j) {
      const bool censored = censor && j >= *censor;
      const bool dead = death && j > *death;
      traj << s.id << ',' << j << ',';
      if (!censored) {
        if (!dead) total += interval_cost(s, j);
        traj << format_double(total);
        at[static_cast<std::size_t>(j - 1)].push_back(total);
      }
      traj << ',' << (dead ? 1 : 0) << ',' << (censored ? 1 : 0) << '\n';
    }
  }
  std::ostringstream summary;
  summary << "j,n,mean,sd,mean_minus_sd,mean_plus_sd\n";
  for (int j = 1; j <= J; ++j) {
    const auto& v = at[static_cast<std::size_t>(j - 1)];
    double mean = 0.0, ss = 0.0;
    for (double x : v) mean += x;
    mean = v.empty() ? std::nan("") : mean / static_cast<double>(v.size());
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : std::nan("");
    summary << j << ',' << v.size() << ',' << format_double(mean) << ',' << format_double(sd) << ','
            << format_double(mean - sd) << ',' << format_double(mean + sd) << '\n';
  }
  dir.write("trajectories.csv", traj.str());
  dir.write("trajectory_summary.csv", summary.str());
  write_manifest(dir, "trajectories", args, opt, cfg, config_bytes, started, json::object());
  out << "wrote " << cohort.subjects.size() << " trajectories to " << opt.out << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& data_path, std::optional<int> J, std::optional<double> tau,
                 const std::string& out_dir, std::ostream& out) {
  std::optional<IntervalGrid> grid;
  if (J) grid = make_grid(*J, tau.value_or(static_cast<double>(*J)));
  const Cohort cohort = read_cohort_csv_file(data_path, grid);
  const ValidationReport rep = validate_cohort(cohort);
  for (const auto& w : rep.warnings) out << "warning: " << describe(w) << "\n";
  for (const auto& v : rep.violations) out << "violation: " << describe(v) << "\n";
  if (!out_dir.empty()) {
    auto list = [](const std::vector<Violation>& vs) {
      json arr = json::array();
      for (const auto& v : vs)
        arr.push_back({{"subject", v.subject_id}, {"interval", v.interval}, {"rule", v.rule}, {"detail", v.detail}});
      return arr;
    };
    OutputDir dir(out_dir);
    dir.write("validation.json", json{{"ok", rep.ok()},
                                      {"subjects", cohort.subjects.size()},
                                      {"J", cohort.grid.J},
                                      {"violations", list(rep.violations)},
                                      {"warnings", list(rep.warnings)}}
                                         .dump(2) +
                                     "\n");
  }
  if (!rep.ok()) throw InputError(std::to_string(rep.violations.size()) + " validation violation(s)");
  out << "ok: " << cohort.subjects.size() << " subjects, J = " << cohort.grid.J << "\n";
  return kExitOk;
}

void add_common(CLI::App* sub, CommonOptions& opt, bool config_required) {
  auto* c = sub->add_option("--config", opt.config_path, "JSON config file");
  if (config_required) c->required();
  sub->add_option("--seed", opt.seed, "top-level seed (overrides the config)");
  sub->add_option("--threads", opt.threads, "worker threads; 0 = machine parallelism");
  sub->add_option("--scale", opt.scale, "multiplier for reps, R and oracle size");
  sub->add_option("--out", opt.out, "output directory");
  sub->add_flag("--dry-run", opt.dry_run, "write resolved config and manifest only");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nested g-formula estimation of treatment effects on censored cumulative costs", "nestedg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NESTEDG_VERSION);

  CommonOptions opt;
  std::string data_path;
  std::optional<int> J;
  std::optional<double> tau;
  std::string validate_out;

  auto* estimate = app.add_subcommand("estimate", "estimate the joint effect from a panel CSV");
  estimate->add_option("--data", data_path, "long-format panel CSV")->required();
  add_common(estimate, opt, false);

  auto* simulate = app.add_subcommand("simulate", "run simulation studies");
  add_common(simulate, opt, true);

  auto* trajectories = app.add_subcommand("trajectories", "emit simulated cumulative-cost trajectories");
  add_common(trajectories, opt, false);

  auto* validate = app.add_subcommand("validate", "check a panel CSV against the data rules");
  validate->add_option("--data", data_path, "long-format panel CSV")->required();
  validate->add_option("--J", J, "number of intervals (default: max j in the data)");
  validate->add_option("--tau", tau, "horizon (default: J)");
  validate->add_option("--out", validate_out, "directory for validation.json");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? std::string(NESTEDG_VERSION) + "\n" : app.help());
      return kExitOk;
    }
    err << "error: InputError: " << e.what() << "\n";
    return kExitInput;
  }

  try {
    if (estimate->parsed()) return cmd_estimate(args, opt, data_path, out);
    if (simulate->parsed()) return cmd_simulate(args, opt, out);
    if (trajectories->parsed()) return cmd_trajectories(args, opt, out);
    if (validate->parsed()) return cmd_validate(data_path, J, tau, validate_out, out);
  } catch (const InputError& e) {
    err << "error: " << e.class_name() << ": " << e.what() << "\n";
    return kExitInput;
  } catch (const ModelError& e) {
    err << "error: " << e.class_name() << ": " << e.what() << "\n";
    return kExitModel;
  } catch (const InferenceError& e) {
    err << "error: " << e.class_name() << ": " << e.what() << "\n";
    return kExitInference;
  } catch (const StudyError& e) {
    err << "error: " << e.class_name() << ": " << e.what() << "\n";
    return kExitStudy;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace nestedg::cli

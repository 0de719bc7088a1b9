#include "nestedg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace nestedg {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw InputError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return node_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number()) throw InputError(field(key) + ": expected a number");
    out = v.get<double>();
  }

  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_boolean()) throw InputError(field(key) + ": expected true or false");
    out = v.get<bool>();
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_string()) throw InputError(field(key) + ": expected a string");
    out = v.get<std::string>();
  }

  template <typename Int>
    requires std::is_integral_v<Int>
  void read(const std::string& key, Int& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      const auto u = v.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(std::numeric_limits<Int>::max()))
        throw InputError(field(key) + ": value out of range");
      out = static_cast<Int>(u);
      return;
    }
    if (v.is_number_integer() && std::is_signed_v<Int>) {
      out = static_cast<Int>(v.get<std::int64_t>());
      return;
    }
    throw InputError(field(key) + ": expected a non-negative integer");
  }

  template <std::size_t N>
  void read(const std::string& key, std::array<double, N>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array() || v.size() != N)
      throw InputError(field(key) + ": expected an array of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number()) throw InputError(field(key) + "[" + std::to_string(i) + "]: expected a number");
      out[i] = v[i].get<double>();
    }
  }

  void read(const std::string& key, Family& out) {
    std::string s;
    read(key, s);
    if (!has(key)) return;
    try {
      out = parse_family(s);
    } catch (const InputError& e) {
      throw InputError(field(key) + ": " + e.what());
    }
  }

  void read(const std::string& key, CensoringMechanism& out) {
    std::string s;
    read(key, s);
    if (!has(key)) return;
    try {
      out = parse_censoring(s);
    } catch (const InputError& e) {
      throw InputError(field(key) + ": " + e.what());
    }
  }

  void read(const std::string& key, std::vector<Estimator>& out) {
    if (!has(key)) return;
    out.clear();
    for (const auto& name : strings(key)) {
      try {
        out.push_back(parse_estimator(name));
      } catch (const InputError& e) {
        throw InputError(field(key) + ": " + e.what());
      }
    }
  }

  void read(const std::string& key, std::vector<Family>& out) {
    if (!has(key)) return;
    out.clear();
    for (const auto& name : strings(key)) {
      try {
        out.push_back(parse_family(name));
      } catch (const InputError& e) {
        throw InputError(field(key) + ": " + e.what());
      }
    }
  }

  void read(const std::string& key, std::optional<TreatmentRegime>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (v.is_null()) {
      out.reset();
      return;
    }
    if (!v.is_array()) throw InputError(field(key) + ": expected an array of 0/1 entries");
    TreatmentRegime r;
    for (const auto& e : v) {
      if (!e.is_number_integer() || (e.get<int>() != 0 && e.get<int>() != 1))
        throw InputError(field(key) + ": entries must be 0 or 1");
      r.assignments.push_back(e.get<int>());
    }
    out = std::move(r);
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    if (node_.at(key).is_null()) {
      used_.insert(key);
      out.reset();
      return;
    }
    T value{};
    read(key, value);
    out = value;
  }

  std::vector<std::string> strings(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) throw InputError(field(key) + ": expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw InputError(field(key) + ": expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : node_.items())
      if (!used_.count(key)) throw InputError("unknown config key '" + field(key) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

void parse_dgp(const json& node, const std::string& path, DgpConfig& cfg) {
  Reader r(node, path);
  r.read("N", cfg.N);
  r.read("J", cfg.J);
  r.read("alpha01", cfg.alpha01);
  r.read("sigma2_L1", cfg.sigma2_L1);
  r.read("alpha", cfg.alpha);
  r.read("sigma2_L", cfg.sigma2_L);
  r.read("eta_baseline", cfg.eta_baseline);
  r.read("eta", cfg.eta);
  r.read("beta_baseline", cfg.beta_baseline);
  r.read("beta", cfg.beta);
  if (r.has("family")) {
    Family f = Family::normal;
    r.read("family", f);
    cfg.family_control = cfg.family_treated = f;
  }
  r.read("family_control", cfg.family_control);
  r.read("family_treated", cfg.family_treated);
  r.read("sigma2_Y", cfg.sigma2_Y);
  r.read("gamma_shape", cfg.gamma_shape);
  r.read("ig_lambda", cfg.ig_lambda);
  r.read("gamma_baseline", cfg.gamma_baseline);
  r.read("gamma", cfg.gamma);
  r.read("censoring", cfg.censoring);
  r.read("censor_p", cfg.censor_p);
  r.read("staggered", cfg.staggered);
  r.read("dropout", cfg.dropout);
  r.read("max_redraws", cfg.max_redraws);
  bool null = false;
  r.read("null", null);
  if (null) cfg = null_dgp(cfg);
  r.finish();
  try {
    validate_dgp(cfg);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void parse_study(const json& node, const std::string& path, StudyConfig& cfg) {
  Reader r(node, path);
  r.read("reps", cfg.reps);
  r.read("estimators", cfg.estimators);
  r.read("fit_families", cfg.fit_families);
  r.read("R", cfg.R);
  r.read("B", cfg.B);
  r.read("regime_a", cfg.regime_a);
  r.read("regime_b", cfg.regime_b);
  r.read("true_delta", cfg.true_delta);
  r.read("oracle_M", cfg.oracle_M);
  r.read("level", cfg.level);
  r.read("common_random_numbers", cfg.common_random_numbers);
  r.read("max_failure_fraction", cfg.max_failure_fraction);
  r.finish();
}

void parse_glm_spec(const json& node, const std::string& path, GlmSpec& spec) {
  Reader r(node, path);
  if (r.has("family")) {
    r.read("family", spec.family);
    spec.link = canonical_link(spec.family);
  }
  if (r.has("link")) {
    std::string link;
    r.read("link", link);
    if (link == "identity") spec.link = Link::identity;
    else if (link == "logit") spec.link = Link::logit;
    else throw InputError(r.field("link") + ": expected identity or logit");
  }
  if (r.has("predictors")) spec.predictors = r.strings("predictors");
  r.finish();
  try {
    validate_spec(spec);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void parse_triple(const json& node, const std::string& path, SequentialModelSpec::Triple& t) {
  Reader r(node, path);
  if (r.has("confounder")) parse_glm_spec(r.raw("confounder"), r.field("confounder"), t.confounder);
  if (r.has("cost")) parse_glm_spec(r.raw("cost"), r.field("cost"), t.cost);
  if (r.has("death")) parse_glm_spec(r.raw("death"), r.field("death"), t.death);
  r.finish();
}

void parse_model(const json& node, const std::string& path, SequentialModelSpec& spec) {
  Reader r(node, path);
  if (r.has("cost_family")) {
    Family f = Family::normal;
    r.read("cost_family", f);
    spec = default_model_spec(f);
  }
  r.read("markov", spec.markov);
  if (r.has("baseline")) parse_triple(r.raw("baseline"), r.field("baseline"), spec.baseline);
  if (r.has("followup")) parse_triple(r.raw("followup"), r.field("followup"), spec.followup);
  r.finish();
  try {
    validate_model_spec(spec);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void parse_estimate(const json& node, const std::string& path, EstimateConfig& cfg) {
  Reader r(node, path);
  if (r.has("model")) parse_model(r.raw("model"), r.field("model"), cfg.spec);
  r.read("regime_a", cfg.regime_a);
  r.read("regime_b", cfg.regime_b);
  r.read("R", cfg.R);
  r.read("B", cfg.B);
  r.read("level", cfg.level);
  r.read("delta0", cfg.delta0);
  r.read("estimators", cfg.estimators);
  r.read("common_random_numbers", cfg.common_random_numbers);
  r.read("J", cfg.J);
  r.read("tau", cfg.tau);
  r.finish();
}

std::size_t scaled(std::size_t v, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(v) * scale)));
}

json regime_json(const std::optional<TreatmentRegime>& r) { return r ? json(r->assignments) : json(nullptr); }

std::vector<std::string> names(const std::vector<Estimator>& v) {
  std::vector<std::string> out;
  for (auto e : v) out.emplace_back(to_string(e));
  return out;
}

std::vector<std::string> names(const std::vector<Family>& v) {
  std::vector<std::string> out;
  for (auto f : v) out.emplace_back(to_string(f));
  return out;
}

json glm_spec_json(const GlmSpec& s) {
  return {{"family", to_string(s.family)}, {"link", to_string(s.link)}, {"predictors", s.predictors}};
}

json triple_json(const SequentialModelSpec::Triple& t) {
  return {{"confounder", glm_spec_json(t.confounder)}, {"cost", glm_spec_json(t.cost)}, {"death", glm_spec_json(t.death)}};
}

}  // namespace

RunConfig parse_run_config(const json& doc, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InputError("--scale must be a positive number");
  RunConfig cfg;
  Reader r(doc, "");
  r.read("seed", cfg.seed);
  r.read("threads", cfg.threads);
  if (r.has("dgp")) parse_dgp(r.raw("dgp"), "dgp", cfg.dgp);
  StudyConfig base;
  if (r.has("study")) parse_study(r.raw("study"), "study", base);
  if (r.has("estimate")) parse_estimate(r.raw("estimate"), "estimate", cfg.estimate);

  auto finalize = [&](StudyConfig s) {
    s.seed = cfg.seed;
    s.threads = cfg.threads;
    s.dgp.seed = cfg.seed;
    s.reps = scaled(s.reps, scale);
    s.R = scaled(s.R, scale);
    s.oracle_M = scaled(s.oracle_M, scale);
    validate_study(s);
    return s;
  };

  if (r.has("scenarios")) {
    const json& list = r.raw("scenarios");
    if (!list.is_array() || list.empty()) throw InputError("scenarios: expected a non-empty array");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = "scenarios[" + std::to_string(i) + "]";
      Reader sr(list[i], path);
      StudyConfig s = base;
      s.dgp = cfg.dgp;
      s.scenario = "scenario_" + std::to_string(i + 1);
      sr.read("name", s.scenario);
      if (!seen.insert(s.scenario).second) throw InputError(path + ".name: duplicate scenario name '" + s.scenario + "'");
      if (sr.has("dgp")) parse_dgp(sr.raw("dgp"), path + ".dgp", s.dgp);
      if (sr.has("study")) parse_study(sr.raw("study"), path + ".study", s);
      sr.finish();
      cfg.scenarios.push_back(finalize(std::move(s)));
    }
  } else {
    StudyConfig s = base;
    s.dgp = cfg.dgp;
    cfg.scenarios.push_back(finalize(std::move(s)));
  }
  r.finish();

  cfg.dgp.seed = cfg.seed;
  cfg.estimate.R = scaled(cfg.estimate.R, scale);
  if (cfg.estimate.B < 2) throw InputError("estimate.B must be >= 2");
  if (!(cfg.estimate.level > 0.0 && cfg.estimate.level < 1.0)) throw InputError("estimate.level must lie in (0, 1)");
  if (cfg.estimate.estimators.empty()) throw InputError("estimate.estimators must not be empty");
  return cfg;
}

RunConfig load_run_config(const std::string& path, double scale, std::string* bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (bytes) *bytes = text;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc, scale);
}

json to_json(const DgpConfig& c) {
  return {{"N", c.N},
          {"J", c.J},
          {"alpha01", c.alpha01},
          {"sigma2_L1", c.sigma2_L1},
          {"alpha", c.alpha},
          {"sigma2_L", c.sigma2_L},
          {"eta_baseline", c.eta_baseline},
          {"eta", c.eta},
          {"beta_baseline", c.beta_baseline},
          {"beta", c.beta},
          {"family_control", to_string(c.family_control)},
          {"family_treated", to_string(c.family_treated)},
          {"sigma2_Y", c.sigma2_Y},
          {"gamma_shape", c.gamma_shape},
          {"ig_lambda", c.ig_lambda},
          {"gamma_baseline", c.gamma_baseline},
          {"gamma", c.gamma},
          {"censoring", to_string(c.censoring)},
          {"censor_p", c.censor_p},
          {"staggered", c.staggered},
          {"dropout", c.dropout},
          {"max_redraws", c.max_redraws}};
}

json to_json(const StudyConfig& c) {
  return {{"name", c.scenario},
          {"dgp", to_json(c.dgp)},
          {"study",
           {{"reps", c.reps},
            {"estimators", names(c.estimators)},
            {"fit_families", names(c.fit_families)},
            {"R", c.R},
            {"B", c.B},
            {"regime_a", regime_json(c.regime_a)},
            {"regime_b", regime_json(c.regime_b)},
            {"true_delta", c.true_delta ? json(*c.true_delta) : json(nullptr)},
            {"oracle_M", c.oracle_M},
            {"level", c.level},
            {"common_random_numbers", c.common_random_numbers},
            {"max_failure_fraction", c.max_failure_fraction}}}};
}

json to_json(const EstimateConfig& c) {
  return {{"model",
           {{"markov", c.spec.markov}, {"baseline", triple_json(c.spec.baseline)}, {"followup", triple_json(c.spec.followup)}}},
          {"regime_a", regime_json(c.regime_a)},
          {"regime_b", regime_json(c.regime_b)},
          {"R", c.R},
          {"B", c.B},
          {"level", c.level},
          {"delta0", c.delta0},
          {"estimators", names(c.estimators)},
          {"common_random_numbers", c.common_random_numbers},
          {"J", c.J ? json(*c.J) : json(nullptr)},
          {"tau", c.tau ? json(*c.tau) : json(nullptr)}};
}

json to_json(const RunConfig& c) {
  json scenarios = json::array();
  for (const auto& s : c.scenarios) scenarios.push_back(to_json(s));
  return {{"seed", c.seed}, {"threads", c.threads}, {"dgp", to_json(c.dgp)}, {"scenarios", scenarios},
          {"estimate", to_json(c.estimate)}};
}

}  // namespace nestedg

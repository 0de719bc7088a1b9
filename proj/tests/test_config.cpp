#include "doctest.h"
#include "nestedg/config.hpp"

using namespace nestedg;
using nlohmann::json;

TEST_SUITE("config") {
  TEST_CASE("empty document gives defaults") {
    const RunConfig c = parse_run_config(json::object());
    CHECK(c.seed == 0);
    CHECK(c.threads == 0);
    REQUIRE(c.scenarios.size() == 1);
    CHECK(c.scenarios[0].reps == 200);
    CHECK(c.scenarios[0].dgp.N == 1000);
    CHECK(c.scenarios[0].dgp.censoring == CensoringMechanism::none);
    CHECK(c.estimate.R == 100000);
    CHECK(c.estimate.B == 100);
    CHECK(c.estimate.estimators.size() == 3);
  }

  TEST_CASE("scenarios inherit the shared dgp and study blocks") {
    const json doc = json::parse(R"({
      "seed": 5, "threads": 2,
      "dgp": {"N": 800, "censoring": "random_p"},
      "study": {"reps": 40, "B": 20, "fit_families": ["normal", "gamma"]},
      "scenarios": [
        {"name": "ig", "dgp": {"family": "inverse_gaussian"}},
        {"name": "mixed", "dgp": {"family_control": "inverse_gaussian", "family_treated": "normal"},
         "study": {"reps": 10}},
        {"dgp": {"null": true}}
      ]
    })");
    const RunConfig c = parse_run_config(doc);
    REQUIRE(c.scenarios.size() == 3);
    const auto& ig = c.scenarios[0];
    CHECK(ig.scenario == "ig");
    CHECK(ig.seed == 5);
    CHECK(ig.threads == 2);
    CHECK(ig.dgp.N == 800);
    CHECK(ig.dgp.censoring == CensoringMechanism::random_p);
    CHECK(ig.dgp.family_control == Family::inverse_gaussian);
    CHECK(ig.dgp.family_treated == Family::inverse_gaussian);
    CHECK(ig.reps == 40);
    CHECK(ig.fit_families.size() == 2);
    CHECK(c.scenarios[1].reps == 10);
    CHECK(c.scenarios[1].B == 20);
    CHECK(c.scenarios[1].dgp.family_treated == Family::normal);
    CHECK(c.scenarios[2].scenario == "scenario_3");
    CHECK(c.scenarios[2].dgp.beta[4] == 0.0);
  }

  TEST_CASE("scale multiplies reps and Monte-Carlo sizes only") {
    const json doc = json::parse(R"({"dgp": {"N": 1000}, "study": {"reps": 200, "R": 20000, "B": 50, "oracle_M": 1000000},
                                     "estimate": {"R": 50000}})");
    const RunConfig c = parse_run_config(doc, 0.1);
    const auto& s = c.scenarios[0];
    CHECK(s.reps == 20);
    CHECK(s.R == 2000);
    CHECK(s.oracle_M == 100000);
    CHECK(s.B == 50);
    CHECK(s.dgp.N == 1000);
    CHECK(c.estimate.R == 5000);
    CHECK(parse_run_config(json{{"study", {{"reps", 3}}}}, 0.01).scenarios[0].reps == 1);
    CHECK_THROWS_AS(parse_run_config(json::object(), 0.0), InputError);
  }

  TEST_CASE("unknown keys and type errors name the field") {
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"dgp", {{"censorng", "none"}}}}),
                         "unknown config key 'dgp.censorng'", InputError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"sed", 1}}), "unknown config key 'sed'", InputError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"dgp", {{"N", "many"}}}}), doctest::Contains("dgp.N"), InputError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"dgp", {{"censoring", "often"}}}}), doctest::Contains("dgp.censoring"),
                         InputError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"dgp", {{"beta", {1, 2}}}}}), doctest::Contains("dgp.beta"), InputError);
    CHECK_THROWS_WITH_AS(parse_run_config(json::parse(R"({"scenarios": [{"dgp": {"J": -1}}]})")),
                         doctest::Contains("scenarios[0].dgp: J must be >= 1"), InputError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"scenarios": [{"name": "a"}, {"name": "a"}]})")), InputError);
    CHECK_THROWS_AS(parse_run_config(json{{"study", {{"B", 1}}}}), InputError);
    CHECK_THROWS_AS(parse_run_config(json{{"estimate", {{"regime_a", {1, 2}}}}}), InputError);
  }

  TEST_CASE("model specification") {
    const json doc = json::parse(R"({"estimate": {"model": {
      "cost_family": "gamma",
      "followup": {"death": {"predictors": ["1", "L"]}}
    }}})");
    const RunConfig c = parse_run_config(doc);
    CHECK(c.estimate.spec.followup.cost.family == Family::gamma);
    CHECK(c.estimate.spec.followup.death.predictors == std::vector<std::string>{"1", "L"});
    CHECK_THROWS_WITH_AS(
        parse_run_config(json::parse(R"({"estimate": {"model": {"baseline": {"cost": {"predictors": ["1", "Y_prev"]}}}}})")),
        doctest::Contains("estimate.model"), InputError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"estimate": {"model": {"followup": {"cost": {"link": "log"}}}}})")),
                    InputError);
  }

  TEST_CASE("resolved config round-trips") {
    const json doc = json::parse(R"({"seed": 9, "dgp": {"censoring": "staggered_entry"},
      "scenarios": [{"name": "a", "study": {"true_delta": 0.0, "regime_a": [1, 1, 1, 1, 1, 1]}}],
      "estimate": {"J": 6, "tau": 6.0}})");
    const json resolved = to_json(parse_run_config(doc));
    CHECK(to_json(parse_run_config(resolved)) == resolved);
  }
}

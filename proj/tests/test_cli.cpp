#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "nestedg/simulation.hpp"

using namespace nestedg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(NESTEDG_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "nestedg");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("sha256 known answers") {
    CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("usage errors exit 2") {
    CHECK(invoke({}).code == 2);
    CHECK(invoke({"estimate"}).code == 2);
    CHECK(invoke({"frobnicate"}).code == 2);
  }

  TEST_CASE("empty panel exits 2 with an input error") {
    const auto dir = scratch("empty");
    put(dir / "empty.csv", "");
    const auto r = invoke({"estimate", "--data", (dir / "empty.csv").string(), "--out", (dir / "out").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("error: InputError: no subjects") == 0);
  }

  TEST_CASE("unknown censoring mechanism exits 2") {
    const auto dir = scratch("badmech");
    put(dir / "cfg.json", R"({"dgp": {"censoring": "sometimes"}})");
    const auto r = invoke({"simulate", "--config", (dir / "cfg.json").string(), "--out", (dir / "out").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("dgp.censoring") != std::string::npos);
  }

  TEST_CASE("estimate on a simulated panel") {
    const auto dir = scratch("estimate");
    DgpConfig d;
    d.seed = 31;
    d.censoring = CensoringMechanism::nonrandom_dropout;
    {
      std::ofstream csv(dir / "panel.csv");
      write_cohort_csv(csv, generate_cohort(d));
    }
    put(dir / "cfg.json", R"({"seed": 4, "estimate": {"R": 5000, "B": 30}})");
    const std::vector<std::string> args{"estimate", "--data", (dir / "panel.csv").string(), "--config",
                                        (dir / "cfg.json").string(), "--out", (dir / "a").string()};
    const auto r = invoke(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json rep = json::parse(slurp(dir / "a" / "effect_report.json"));
    const double delta = rep["delta_hat"], se = rep["se_hat"];
    CHECK(std::abs(delta - 5.413) < 3.0 * se);
    CHECK(se > 0.2);
    CHECK(se < 1.5);
    CHECK(rep["replicates"].size() == 30);

    const auto itt = slurp(dir / "a" / "itt_estimates.csv");
    CHECK(itt.rfind("method,delta_itt,contributors,delta_1,delta_2,delta_3,delta_4,delta_5,delta_6\n", 0) == 0);
    CHECK(itt.find("\npartitioned,") != std::string::npos);
    CHECK(itt.find("\niptw_partitioned,") != std::string::npos);

    const json man = json::parse(slurp(dir / "a" / "manifest.json"));
    CHECK(man["command"] == "estimate");
    CHECK(man["config_digest"] == "sha256:" + cli::sha256_hex(slurp(dir / "cfg.json")));
    CHECK(man["data_digest"] == "sha256:" + cli::sha256_hex(slurp(dir / "panel.csv")));
    CHECK(man["seed"] == 4);

    // Same inputs, same bytes; thread count does not matter.
    auto again = args;
    again.back() = (dir / "b").string();
    again.insert(again.end(), {"--threads", "3"});
    REQUIRE(invoke(again).code == 0);
    for (const char* f : {"effect_report.json", "effect_report.csv", "itt_estimates.csv"})
      CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
  }

  TEST_CASE("dry run writes only the resolved config and manifest") {
    const auto dir = scratch("dry");
    put(dir / "cfg.json", R"({"study": {"reps": 100, "R": 1000}})");
    const auto r = invoke({"simulate", "--config", (dir / "cfg.json").string(), "--out", (dir / "out").string(),
                        "--dry-run", "--scale", "0.5", "--seed", "17"});
    REQUIRE(r.code == 0);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir / "out")) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    CHECK(files == std::vector<std::string>{"manifest.json", "resolved_config.json"});
    const json resolved = json::parse(slurp(dir / "out" / "resolved_config.json"));
    CHECK(resolved["seed"] == 17);
    CHECK(resolved["scenarios"][0]["study"]["reps"] == 50);
    CHECK(resolved["scenarios"][0]["study"]["R"] == 500);
    const json man = json::parse(slurp(dir / "out" / "manifest.json"));
    CHECK(man["dry_run"] == true);
    CHECK(man["scale"] == 0.5);
  }

  TEST_CASE("simulate writes study tables") {
    const auto dir = scratch("simulate");
    put(dir / "cfg.json", R"({"seed": 3, "study": {"reps": 2, "R": 500, "B": 0, "oracle_M": 5000,
                              "estimators": ["nested_g", "lin_partitioned"]}})");
    const auto r = invoke({"simulate", "--config", (dir / "cfg.json").string(), "--out", (dir / "out").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto summary = slurp(dir / "out" / "study_summary.csv");
    CHECK(summary.rfind("scenario,estimator,fit_family,n_ok,", 0) == 0);
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);
    const json truth = json::parse(slurp(dir / "out" / "study_truth.json"));
    CHECK(truth[0]["true_delta"].get<double>() > 3.0);
  }

  TEST_CASE("trajectories") {
    const auto dir = scratch("traj");
    put(dir / "cfg.json", R"({"seed": 2, "dgp": {"N": 15, "censoring": "random_p"}})");
    const auto r = invoke({"trajectories", "--config", (dir / "cfg.json").string(), "--out", (dir / "out").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    std::istringstream traj(slurp(dir / "out" / "trajectories.csv"));
    std::string line;
    std::getline(traj, line);
    CHECK(line == "id,j,cumulative_cost,dead,censored");
    int rows = 0;
    std::string prev_id;
    double prev_total = 0.0;
    while (std::getline(traj, line)) {
      ++rows;
      std::istringstream f(line);
      std::string id, j, total, dead, cens;
      std::getline(f, id, ',');
      std::getline(f, j, ',');
      std::getline(f, total, ',');
      std::getline(f, dead, ',');
      std::getline(f, cens, ',');
      if (cens == "1") {
        CHECK(total.empty());
        continue;
      }
      const double t = std::stod(total);
      // After death the cumulative cost stays flat.
      if (id == prev_id && dead == "1") CHECK(t == prev_total);
      prev_id = id;
      prev_total = t;
    }
    CHECK(rows == 15 * 6);
    const auto summary = slurp(dir / "out" / "trajectory_summary.csv");
    CHECK(summary.rfind("j,n,mean,sd,mean_minus_sd,mean_plus_sd\n", 0) == 0);

    put(dir / "zero.json", R"({"dgp": {"N": 0}})");
    CHECK(invoke({"trajectories", "--config", (dir / "zero.json").string(), "--out", (dir / "z").string()}).code == 2);
  }

  TEST_CASE("validate") {
    const auto dir = scratch("validate");
    put(dir / "good.csv", "id,j,c,l_1,a,y,d\n1,1,0,0.5,1,10,0\n1,2,0,0.2,1,11,0\n2,1,0,0.1,0,9,1\n2,2,0,,,0,1\n");
    auto r = invoke({"validate", "--data", (dir / "good.csv").string(), "--out", (dir / "ok").string()});
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(json::parse(slurp(dir / "ok" / "validation.json"))["ok"] == true);

    put(dir / "bad.csv", "id,j,c,l_1,a,y,d\n1,1,0,0.5,1,10,1\n1,2,0,,,5,1\n");
    r = invoke({"validate", "--data", (dir / "bad.csv").string(), "--out", (dir / "bad").string()});
    CHECK(r.code == 2);
    const json v = json::parse(slurp(dir / "bad" / "validation.json"));
    CHECK(v["ok"] == false);
    CHECK(v["violations"][0]["rule"] == "cost after death");
  }

  TEST_CASE("model failures exit 3") {
    const auto dir = scratch("model");
    // Nobody dies, so the death models cannot be fitted.
    std::string csv = "id,j,c,l_1,a,y,d\n";
    for (int i = 0; i < 20; ++i)
      csv += std::to_string(i) + ",1,0," + std::to_string(0.1 * i) + "," + std::to_string(i % 2) + ",10,0\n";
    put(dir / "p.csv", csv);
    put(dir / "cfg.json", R"({"estimate": {"R": 100, "B": 5, "estimators": ["nested_g"]}})");
    const auto r = invoke({"estimate", "--data", (dir / "p.csv").string(), "--config", (dir / "cfg.json").string(),
                        "--out", (dir / "out").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("death model") != std::string::npos);
  }
}

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "obf/error.hpp"
#include "obf/experiment.hpp"

using namespace obf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base_config(const std::string& task) {
  auto c = json::parse(R"({
    "task": "simulate", "seed": 5, "trials": 2000,
    "model": {"kind": "rayleigh", "snr": 1.0, "beams": 2, "users": 3},
    "policies": [{"label": "never", "rule": {"kind": "never"}}]
  })");
  c["task"] = task;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("obf_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool contains(const std::vector<std::string>& diags, const std::string& needle) {
  for (const auto& d : diags) {
    if (d.find(needle) != std::string::npos) return true;
  }
  return false;
}

int run_binary(const std::string& args) {
  const char* bin = std::getenv("OBF_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "OBF_BIN must point at the CLI binary");
  const int status = std::system((std::string(bin) + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("validation diagnostics") {
  CHECK(validate_config(base_config("simulate")).empty());

  auto c = base_config("optimize");
  c["lambda"] = -0.5;
  CHECK(contains(validate_config(c), "infeasible feedback budget"));

  c = base_config("simulate");
  c["policies"] = json::parse(R"([{"label": "short", "rules": [{"kind": "never"}, {"kind": "always"}]}])");
  CHECK(contains(validate_config(c), "2 rules but the model has 3 users"));

  c = base_config("simulate");
  c.erase("seed");
  c["task"] = "dance";
  c["model"]["beams"] = 0;
  const auto diags = validate_config(c);
  CHECK(contains(diags, "seed is mandatory"));
  CHECK(contains(diags, "unknown task"));
  CHECK(contains(diags, "beam count"));

  c = base_config("verify-theorem1");
  c["match"] = {{"kind", "mtfp"}};
  c["policies"] = json::parse(R"([{"label": "b", "random_box_union": {"seed": 1}}])");
  CHECK(contains(validate_config(c), "invalid policy kind for task"));

  CHECK_THROWS_AS(parse_config(c), ConfigError);
}

TEST_CASE("policy declarations") {
  auto c = base_config("simulate");
  c["policies"] = json::parse(R"([
    {"label": "g", "rule": {"kind": "gtfp", "probability": 0.3}},
    {"label": "m", "rule": {"kind": "mtfp", "tau": 1.5}},
    {"label": "b", "rules": [
        {"kind": "box_union", "boxes": [[[0.5, "inf"], [0, 0.3]]]},
        {"kind": "max_sinr_box_union", "intervals": [[1, 2], [3, null]]},
        {"kind": "always"}]},
    {"label": "r", "random_box_union": {"count": 3, "seed": 10}}
  ])");
  const auto cfg = parse_config(c);
  REQUIRE(cfg.policies.size() == 6);
  CHECK(marginal_survival(cfg.model, cfg.policies[0].rules[2].threshold()) == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(cfg.policies[1].rules[0].kind() == RuleKind::MaxSinrThreshold);
  CHECK(cfg.policies[2].rules[0].kind() == RuleKind::BoxUnion);
  CHECK(cfg.policies[2].rules[1].max_region().intervals.size() == 2);
  CHECK(cfg.policies[5].label == "r-2");

  c["policies"] = json::parse(R"([{"label": "x", "rule": {"kind": "gtfp", "tau": 1, "probability": 0.2}}])");
  CHECK(contains(validate_config(c), "exactly one of"));
}

TEST_CASE("simulate a never-feed-back policy") {
  const auto dir = scratch("simulate");
  auto c = base_config("simulate");
  c["output"] = {{"dir", dir.string()}};
  const auto cfg = parse_config(c);
  const auto bundle = run(cfg);
  CHECK(bundle.passed);
  const auto csv = slurp(dir / "simulate.csv");
  CHECK(csv.find(cfg.hash() + ",5,never,rate_mean,-1,0\n") != std::string::npos);
  const auto report = json::parse(slurp(dir / "simulate.json"));
  CHECK(report["results"][0]["rate"]["mean"] == 0.0);
  CHECK(report["config_hash"] == cfg.hash());

  // Every data row carries the hash and the seed.
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) CHECK(line.rfind(cfg.hash() + ",5,", 0) == 0);
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().extension() != ".tmp");
}

TEST_CASE("reruns are byte identical") {
  auto c = base_config("verify-theorem1");
  c["trials"] = 3000;
  c["match"] = {{"samples", 20000}};
  c["verify"] = {{"spot_checks", 1}, {"spot_trials", 1000}};
  c["policies"] = json::parse(R"([{"label": "r", "random_box_union": {"count": 2, "seed": 3}}])");
  const auto a = scratch("rerun_a");
  const auto b = scratch("rerun_b");
  c["output"] = {{"dir", a.string()}};
  const auto ra = run(parse_config(c));
  c["output"] = {{"dir", b.string()}};
  const auto rb = run(parse_config(c));
  CHECK(ra.config_hash == rb.config_hash);
  CHECK(slurp(a / "verify-theorem1.json") == slurp(b / "verify-theorem1.json"));
  CHECK(slurp(a / "verify-theorem1.csv") == slurp(b / "verify-theorem1.csv"));
  CHECK(ra.passed);
}

TEST_CASE("overrides and config hash") {
  const auto c = base_config("simulate");
  ConfigOverrides o;
  o.seed = 99;
  o.trials = 500;
  o.log_base = "bits";
  const auto applied = apply_overrides(c, o);
  const auto cfg = parse_config(applied);
  CHECK(cfg.seed == 99);
  CHECK(cfg.trials == 500);
  CHECK(cfg.unit == RateUnit::Bits);
  CHECK(cfg.hash() != parse_config(c).hash());
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("optimize task writes trace and surface") {
  const auto dir = scratch("optimize");
  auto c = base_config("optimize");
  c.erase("policies");
  c["model"]["users"] = 2;
  c["lambda"] = 0.4;
  c["trials"] = 1000;
  c["optimize"] = {{"method", "simplex-grid"}, {"resolution", 0.1}};
  c["output"] = {{"dir", dir.string()}};
  const auto bundle = run(parse_config(c));
  CHECK(fs::exists(dir / "optimize_trace.csv"));
  CHECK(fs::exists(dir / "optimize_surface.csv"));
  CHECK(bundle.files.size() == 4);
}

TEST_CASE("binary exit codes and worker invariance") {
  const auto dir = scratch("binary");
  auto c = base_config("verify-chain");
  c["trials"] = 5000;
  c["match"] = {{"samples", 20000}};
  c["policies"] = json::parse(R"([{"label": "r", "random_box_union": {"seed": 4}}])");
  std::ofstream(dir / "ok.json") << c.dump();
  CHECK(run_binary((dir / "ok.json").string() + " --out " + (dir / "j1").string() + " --jobs 1") == 0);
  CHECK(run_binary((dir / "ok.json").string() + " --out " + (dir / "j8").string() + " --jobs 8") == 0);
  for (const char* f : {"verify-chain.json", "verify-chain.csv"}) {
    const auto one = slurp(dir / "j1" / f);
    CHECK_FALSE(one.empty());
    CHECK(one == slurp(dir / "j8" / f));
  }

  CHECK(run_binary("validate " + (dir / "ok.json").string()) == 0);

  auto bad = c;
  bad["task"] = "dance";
  std::ofstream(dir / "bad.json") << bad.dump();
  CHECK(run_binary((dir / "bad.json").string()) == 2);
  CHECK(run_binary("validate " + (dir / "bad.json").string()) == 2);
  CHECK(run_binary((dir / "missing.json").string()) == 4);

  // Output directory path blocked by a regular file.
  std::ofstream(dir / "blocker") << "x";
  CHECK(run_binary((dir / "ok.json").string() + " --out " + (dir / "blocker" / "sub").string()) == 4);

  // Demanding a strictly positive margin turns an ordinary run into a FAIL.
  auto fail = c;
  fail["verify"] = {{"slack_se", -1000.0}};
  std::ofstream(dir / "fail.json") << fail.dump();
  CHECK(run_binary((dir / "fail.json").string() + " --out " + (dir / "f").string()) == 3);
  CHECK(json::parse(slurp(dir / "f" / "verify-chain.json"))["pass"] == false);
}

// Batch experiment runner: obf CONFIG [options], or obf validate CONFIG.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "obf/error.hpp"
#include "obf/experiment.hpp"
#include "obf/parallel.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitFail = 3;
constexpr int kExitIo = 4;

int validate_only(const std::string& path) {
  const auto diags = obf::validate_config(obf::load_config_file(path));
  for (const auto& d : diags) std::cout << d << '\n';
  if (diags.empty()) std::cout << "ok\n";
  return diags.empty() ? kExitOk : kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Opportunistic beamforming feedback experiments"};
  app.set_version_flag("--version", "obf 1.0");

  std::string config_path;
  obf::ConfigOverrides overrides;
  unsigned jobs = 0;
  std::string cache_dir;

  auto* validate = app.add_subcommand("validate", "Check a config and list every problem without running it");
  std::string validate_path;
  validate->add_option("config", validate_path, "Experiment config (JSON)")->required();

  app.add_option("config", config_path, "Experiment config (JSON)");
  app.add_option("--seed", overrides.seed, "Override the config seed");
  app.add_option("--trials", overrides.trials, "Override the trial count");
  app.add_option("--out", overrides.out_dir, "Output directory");
  app.add_option("--log-base", overrides.log_base, "Rate unit")->check(CLI::IsMember({"nats", "bits"}));
  app.add_option("--jobs", jobs, "Worker threads (results do not depend on it)");
  app.add_option("--cache-dir", cache_dir, "Directory for persisted quantile tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*validate) return validate_only(validate_path);
    if (config_path.empty()) {
      std::cerr << "error: a config path is required\n";
      return kExitConfig;
    }
    if (jobs > 0) obf::parallel::set_worker_count(jobs);
    if (!cache_dir.empty()) obf::set_quantile_cache_dir(cache_dir);

    const auto raw = obf::apply_overrides(obf::load_config_file(config_path), overrides);
    const auto config = obf::parse_config(raw);
    const auto bundle = obf::run(config);
    for (const auto& f : bundle.files) std::cout << f.string() << '\n';
    std::cout << obf::to_string(config.task) << ": " << (bundle.passed ? "PASS" : "FAIL") << " (config "
              << bundle.config_hash << ")\n";
    return bundle.passed ? kExitOk : kExitFail;
  } catch (const obf::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::logic_error& e) {
    // ConfigError, DomainError, ShapeError, KindError and ContractError all derive from logic_error.
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "obf/fading.hpp"
#include "obf/optimizer.hpp"
#include "obf/policy.hpp"
#include "obf/scheduler.hpp"
#include "obf/threshold.hpp"

namespace obf {

enum class Task { Simulate, Match, VerifyTheorem1, VerifyChain, ClassifyEvents, Optimize };

std::string to_string(Task task);
Task task_from_string(std::string_view name);

struct MatchSettings {
  MatchKind kind = MatchKind::Gtfp;
  std::int64_t samples = kDefaultMatchSamples;
  std::uint64_t seed = VerifyOptions{}.match_seed;
};

struct OptimizeSettings {
  OptimizationMethod method = OptimizationMethod::Homogeneous;
  MatchKind kind = MatchKind::Gtfp;
  double resolution = 0.05;
  /// Starting probabilities for coordinate ascent; empty means the homogeneous split.
  std::vector<double> init;
  OptimizerOptions options;
};

/// Parsed, validated experiment. `source` is the effective JSON (overrides
/// applied, output block removed) and is what the config hash covers.
struct ExperimentConfig {
  nlohmann::json source;
  Task task = Task::Simulate;
  std::uint64_t seed = 0;
  std::int64_t trials = 0;
  double lambda = 0.0;
  RateUnit unit = RateUnit::Nats;
  ChannelModel model;
  std::vector<PolicySpec> policies;
  MatchSettings match;
  OptimizeSettings optimize;
  std::int64_t classify_matrices = 100'000;
  VerifyOptions verify;
  std::filesystem::path out_dir = "out";

  std::string hash() const;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> trials;
  std::optional<std::string> out_dir;
  std::optional<std::string> log_base;
};

/// Applies command-line overrides to a raw config document.
nlohmann::json apply_overrides(nlohmann::json config, const ConfigOverrides& overrides);

/// Every violation in the document; empty when it is well formed.
std::vector<std::string> validate_config(const nlohmann::json& config);

/// Throws ConfigError listing all diagnostics when the document is invalid.
ExperimentConfig parse_config(const nlohmann::json& config);

/// Reads and parses a JSON file; IoError when unreadable, ConfigError on syntax errors.
nlohmann::json load_config_file(const std::filesystem::path& path);

struct ResultBundle {
  std::string config_hash;
  std::vector<std::filesystem::path> files;
  /// False when a verification task reported FAIL.
  bool passed = true;
  nlohmann::json summary;
};

ResultBundle run(const ExperimentConfig& config);

/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

}  // namespace obf

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "obf/fading.hpp"
#include "obf/scheduler.hpp"
#include "obf/threshold.hpp"

namespace obf {

/// Thresholds and the per-user beam-1 feedback probabilities they induce.
/// GTFP: p_i = P(gamma_{i,1} >= tau_i). MTFP: p_i = P(gamma_i* >= tau_i) / M,
/// so p_i never exceeds 1/M.
struct ThresholdVector {
  std::vector<double> taus;
  std::vector<double> probs;

  double load() const;
};

enum class OptimizationMethod { Homogeneous, CoordinateAscent, SimplexGrid };

std::string to_string(OptimizationMethod method);

/// Largest per-user feedback probability the threshold family can reach.
double max_probability(const ChannelModel& model, MatchKind kind);

/// Maps probabilities to thresholds through the fading quantiles.
ThresholdVector thresholds_from_probabilities(const ChannelModel& model, MatchKind kind,
                                              const std::vector<double>& probs);

/// Threshold policy (GTFP or MTFP) for the given thresholds.
PolicySpec threshold_policy(const ThresholdVector& point, MatchKind kind);

struct TracePoint {
  int start = 0;
  int iteration = 0;
  ThresholdVector point;
  RateEstimate rate;
};

struct OptimizationResult {
  ThresholdVector best;
  RateEstimate rate;
  OptimizationMethod method = OptimizationMethod::Homogeneous;
  int iterations = 0;
  std::int64_t oracle_calls = 0;
  std::vector<TracePoint> trace;
  /// Every evaluated grid point (simplex_grid only).
  std::vector<TracePoint> surface;
};

struct OptimizerOptions {
  /// Evenly spaced points scanned before golden-section refinement.
  int coarse_points = 11;
  /// Golden-section stops when the bracket is below this width in p.
  double tolerance = 2e-3;
  int max_cycles = 20;
  /// Random feasible starts in addition to the supplied one.
  int random_starts = 4;
};

/// Best homogeneous point p * 1 for p in (0, min(pmax, lambda / n)].
OptimizationResult homogeneous_search(ChannelModel model, int users, double lambda, MatchKind kind,
                                      std::int64_t trials, std::uint64_t seed, const OptimizerOptions& options = {});

/// Multi-start cyclic 1-D ascent over per-user probabilities. A move is taken
/// only when it raises the estimated rate, so each start's trace is monotone.
OptimizationResult coordinate_ascent(ChannelModel model, int users, double lambda, MatchKind kind,
                                     std::int64_t trials, std::uint64_t seed, const ThresholdVector& init,
                                     const OptimizerOptions& options = {});

/// Exhaustive evaluation of {p : p_i = k_i * resolution, sum p <= lambda}; n <= 3.
OptimizationResult simplex_grid(ChannelModel model, int users, double lambda, MatchKind kind, double resolution,
                                std::int64_t trials, std::uint64_t seed);

nlohmann::json to_json(const ThresholdVector& point);
nlohmann::json to_json(const OptimizationResult& result);

}  // namespace obf

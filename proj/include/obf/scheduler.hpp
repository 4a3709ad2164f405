#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "obf/fading.hpp"
#include "obf/policy.hpp"
#include "obf/stats.hpp"

namespace obf {

enum class RateUnit { Nats, Bits };

std::string to_string(RateUnit unit);
RateUnit rate_unit_from_string(std::string_view name);

/// Per-beam scheduling outcome. winner is -1 iff the contender set is empty.
struct BeamAssignment {
  std::vector<int> winner;
  std::vector<double> winning_sinr;
  std::vector<std::vector<int>> contenders;
};

struct InstantaneousRate {
  std::vector<double> per_beam;
  double total = 0.0;
  BeamAssignment assignment;
};

/// Ergodic sum-rate estimate. mean equals the sum of per_beam_means.
struct RateEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double ci95_lo = 0.0;
  double ci95_hi = 0.0;
  std::int64_t trials = 0;
  std::uint64_t seed = 0;
  std::vector<double> per_beam_means;
  RateUnit unit = RateUnit::Nats;

  RateEstimate in(RateUnit target) const;
};

/// CRN paired estimate of R(second) - R(first).
struct PairedRateEstimate {
  RateEstimate first;
  RateEstimate second;
  double mean_difference = 0.0;
  double std_error = 0.0;
};

struct FeedbackLoad {
  double lambda_per_beam = 0.0;
  bool analytic = true;
  double std_error = 0.0;
};

/// Per-user requested-beam masks for one realization.
void decide_feedback(const PolicySpec& policy, const SinrMatrix& gamma, std::span<BeamMask> masks);

/// User winning `beam`, or -1 if nobody requested it. Lowest user index wins ties.
int beam_winner(const SinrMatrix& gamma, std::span<const BeamMask> masks, int beam);

/// r^m = log(1 + max contender SINR on m), zero on beams nobody requested.
InstantaneousRate instantaneous_rate(const PolicySpec& policy, const SinrMatrix& gamma);

RateEstimate ergodic_rate(const PolicySpec& policy, const ChannelModel& model, std::int64_t trials,
                          std::uint64_t seed);

/// Evaluates both policies on the same SINR matrices.
PairedRateEstimate paired_rate_difference(const PolicySpec& first, const PolicySpec& second,
                                          const ChannelModel& model, std::int64_t trials, std::uint64_t seed);

/// R(F | Gamma_{-1}): user 1's column is resampled per trial, the other
/// columns stay fixed. `others` holds users 2..n in order.
RateEstimate conditional_rate_given_others(const PolicySpec& policy, const ChannelModel& model,
                                           const SinrMatrix& others, std::int64_t trials, std::uint64_t seed);

/// Paired conditional estimate of R(second | Gamma_{-1}) - R(first | Gamma_{-1}).
PairedRateEstimate paired_conditional_difference(const PolicySpec& first, const PolicySpec& second,
                                                 const ChannelModel& model, const SinrMatrix& others,
                                                 std::int64_t trials, std::uint64_t seed);

/// Lambda(F) = sum_i P(F_i selects beam 1).
FeedbackLoad feedback_load(const PolicySpec& policy, const ChannelModel& model, std::int64_t samples,
                           std::uint64_t seed);

}  // namespace obf

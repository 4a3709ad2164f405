#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "obf/error.hpp"
#include "obf/fading.hpp"
#include "obf/policy.hpp"
#include "obf/scheduler.hpp"

namespace obf {

/// Which threshold family a policy is matched against: general thresholds
/// (any beam at or above tau) or maximum-SINR thresholds (argmax beam only).
enum class MatchKind { Gtfp, Mtfp };

std::string to_string(MatchKind kind);
MatchKind match_kind_from_string(std::string_view name);

/// Default number of calibration vectors per user for Monte Carlo matching.
inline constexpr std::int64_t kDefaultMatchSamples = 1'000'000;

/// Allowed |Lambda(F) - Lambda(T)| for an n-user matched pair.
inline double load_tolerance(int users) { return 1e-3 * users; }

/// Raised by matching when a rule fails the beam-symmetry probe.
class SymmetryError : public ContractError {
 public:
  SymmetryError(const std::string& what, SymmetryReport report)
      : ContractError(what), report_(std::move(report)) {}
  const SymmetryReport& report() const { return report_; }

 private:
  SymmetryReport report_;
};

/// A policy F and its load-matched threshold policy T.
struct MatchedPolicyPair {
  PolicySpec original;
  PolicySpec matched;
  MatchKind kind = MatchKind::Gtfp;
  std::vector<double> thresholds;
  /// P(F_i selects beam 1), exact or Monte Carlo.
  std::vector<double> original_probabilities;
  std::vector<double> original_std_errors;
  std::vector<bool> estimated;
  /// P(T_i selects beam 1) through the fading quantile machinery.
  std::vector<double> matched_probabilities;
  double load_original = 0.0;
  double load_matched = 0.0;
  double tolerance_achieved = 0.0;

  int users() const { return original.users(); }
  bool load_matched_within(double tolerance) const { return tolerance_achieved <= tolerance; }
};

/// Chooses tau_i with P(gamma_{i,1} >= tau_i) = P(F_i selects beam 1). Monte
/// Carlo probabilities use the same seeded calibration sample as the empirical
/// quantile, so the in-sample loads agree exactly. Threshold rules map to
/// themselves.
MatchedPolicyPair match_gtfp(const PolicySpec& policy, const ChannelModel& model,
                             std::int64_t samples = kDefaultMatchSamples, std::uint64_t seed = 1);

/// Maximum-SINR analogue: tau_i solves (1/M) P(gamma_i* >= tau_i) = P(F_i selects beam 1).
/// Throws KindError unless every rule is of maximum-SINR kind.
MatchedPolicyPair match_mtfp(const PolicySpec& policy, const ChannelModel& model,
                             std::int64_t samples = kDefaultMatchSamples, std::uint64_t seed = 1);

MatchedPolicyPair match_policy(const PolicySpec& policy, const ChannelModel& model, MatchKind kind,
                               std::int64_t samples = kDefaultMatchSamples, std::uint64_t seed = 1);

/// Users 1..k switched to their matched threshold rules; k = 0 is F, k = n is T.
PolicySpec one_user_switch(const PolicySpec& policy, const MatchedPolicyPair& pair, int k);

enum class EventClass { Loss, Gain, Neutral };

std::string to_string(EventClass event);

/// Membership tests for one user's loss region S_L (inside FB, below tau),
/// retained region S_R (inside FB, at or above tau) and gain region (outside
/// FB, where the threshold rule would request the beam). Maximum-SINR pairs
/// compare gamma* instead of the beam SINR, and their gain region also needs
/// the beam to be the argmax.
class RegionPartition {
 public:
  RegionPartition(FeedbackRule rule, double tau, MatchKind kind)
      : rule_(std::move(rule)), tau_(tau), kind_(kind) {}

  static RegionPartition for_user(const MatchedPolicyPair& pair, int user);

  bool in_feedback_region(SinrVector v, int beam = 0) const { return rule_.selects_beam(v, beam); }
  bool in_loss_region(SinrVector v, int beam = 0) const;
  bool in_retained_region(SinrVector v, int beam = 0) const;
  bool in_gain_region(SinrVector v, int beam = 0) const;
  /// SINR compared against tau and against the other contenders.
  double statistic(SinrVector v, int beam = 0) const;
  double threshold() const { return tau_; }

 private:
  FeedbackRule rule_;
  double tau_;
  MatchKind kind_;
};

/// Compares beam-1 rates of F1 and F on gamma. F and F1 must differ only in
/// the rule of `user` (0-based); otherwise ContractError.
EventClass classify_event_by_rate(const PolicySpec& f, const PolicySpec& f1, const SinrMatrix& gamma,
                                  int user = 0);

/// Loss iff user 1's vector is in S_L and the best other beam-1 contender is
/// below user 1's SINR; Gain likewise with the gain region; Neutral otherwise.
EventClass classify_event_by_lemma(const MatchedPolicyPair& pair, const SinrMatrix& gamma);

struct VerifyOptions {
  std::int64_t match_samples = kDefaultMatchSamples;
  std::uint64_t match_seed = 0x6d61746368ULL;
  int spot_checks = 5;
  std::int64_t spot_trials = 20'000;
  /// Paired differences pass when >= -slack_se * SE.
  double slack_se = 3.0;
};

struct EventFrequencies {
  std::int64_t loss = 0;
  std::int64_t gain = 0;
  std::int64_t neutral = 0;

  std::int64_t total() const { return loss + gain + neutral; }
};

struct SpotCheck {
  std::uint64_t draw = 0;
  double mean_difference = 0.0;
  double std_error = 0.0;
  bool pass = false;
};

struct Theorem1Report {
  std::string label;
  MatchKind kind = MatchKind::Gtfp;
  double threshold = 0.0;
  RateEstimate rate_original;
  RateEstimate rate_switched;
  double mean_difference = 0.0;
  double std_error = 0.0;
  double load_original = 0.0;
  double load_switched = 0.0;
  double load_tolerance_achieved = 0.0;
  bool load_ok = false;
  EventFrequencies events;
  std::int64_t classifier_disagreements = 0;
  /// E[r1(F) 1{A_L}] against its bound P(A_L) log(1 + tau).
  double loss_rate = 0.0;
  double loss_bound = 0.0;
  std::int64_t loss_bound_violations = 0;
  /// E[r1(F) 1{A_G}] against E[1{A_G} log(1 + best other contender)].
  double gain_rate = 0.0;
  double gain_identity = 0.0;
  std::int64_t gain_identity_violations = 0;
  std::vector<SpotCheck> spot_checks;
  bool pass = false;
};

/// Paired CRN check of R(F1) >= R(F) where F1 switches user 1 to its matched rule.
Theorem1Report verify_theorem1(const PolicySpec& policy, const ChannelModel& model, MatchKind kind,
                               std::int64_t trials, std::uint64_t seed, const VerifyOptions& options = {});

struct ChainStep {
  int k = 0;
  double mean_difference = 0.0;  // R(F^k) - R(F^{k-1})
  double std_error = 0.0;
  bool pass = false;
};

struct ChainReport {
  std::string label;
  MatchKind kind = MatchKind::Gtfp;
  std::vector<double> rates;  // R(F^k), k = 0..n
  std::vector<double> rate_std_errors;
  std::vector<double> loads;  // Lambda(F^k)
  std::vector<ChainStep> steps;
  bool loads_agree = false;
  bool pass = false;
};

/// Evaluates all n + 1 hybrids F^0 = F, ..., F^n = T on common random numbers.
ChainReport verify_monotone_chain(const PolicySpec& policy, const ChannelModel& model, MatchKind kind,
                                  std::int64_t trials, std::uint64_t seed, const VerifyOptions& options = {});

struct MassBalance {
  int user = 0;
  double gain_mass = 0.0;
  double loss_mass = 0.0;
  double difference = 0.0;
  double std_error = 0.0;
  bool pass = false;
};

struct EventAudit {
  EventFrequencies by_rate;
  EventFrequencies by_lemma;
  std::int64_t agreements = 0;
  std::int64_t disagreements = 0;
  std::vector<MassBalance> mass_balance;
  bool pass = false;
};

/// Runs both event classifiers on `matrices` sampled realizations and checks
/// the per-user mass balance P(gain region) = P(loss region) within slack_se
/// combined standard errors (test sample plus calibration).
EventAudit audit_events(const MatchedPolicyPair& pair, const ChannelModel& model, std::int64_t matrices,
                        std::uint64_t seed, double slack_se = 3.0);

nlohmann::json to_json(const MatchedPolicyPair& pair);
nlohmann::json to_json(const Theorem1Report& report);
nlohmann::json to_json(const ChainReport& report);
nlohmann::json to_json(const EventAudit& audit);
nlohmann::json to_json(const RateEstimate& estimate);

}  // namespace obf

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "obf/fading.hpp"

namespace obf {

/// Bit k set means beam k (0-based) is requested.
using BeamMask = std::uint64_t;

inline bool mask_has(BeamMask mask, int beam) { return (mask >> beam) & 1U; }

/// Half-open interval [lo, hi); hi may be +inf.
struct Interval {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double x) const { return x >= lo && x < hi; }
  bool operator==(const Interval&) const = default;
};

/// Axis-aligned box over a canonical SINR vector: side 0 constrains the beam
/// being decided on, sides 1..M-1 constrain the remaining beams sorted in
/// descending order.
struct Box {
  std::vector<Interval> sides;

  bool contains(SinrVector canonical) const;
  bool operator==(const Box&) const = default;
};

/// Beam-1 feedback region template: a finite union of boxes.
struct BoxUnionRegion {
  std::vector<Box> boxes;

  int beams() const { return boxes.empty() ? 0 : static_cast<int>(boxes.front().sides.size()); }
  bool contains(SinrVector canonical) const;
  bool operator==(const BoxUnionRegion&) const = default;
};

/// Union of intervals on the maximum SINR.
struct IntervalUnion {
  std::vector<Interval> intervals;

  bool contains(double x) const;
  bool operator==(const IntervalUnion&) const = default;
};

enum class RuleKind { GeneralThreshold, MaxSinrThreshold, BoxUnion, MaxSinrBoxUnion, Predicate };

std::string to_string(RuleKind kind);

/// Opaque decision: full SINR vector to requested beam mask.
using PredicateFn = std::function<BeamMask(SinrVector)>;
/// Beam-1 template evaluated on a canonical vector (own beam first, others descending).
using TemplateFn = std::function<bool(SinrVector)>;

/// Writes the canonical form of v for beam `beam` into out: v[beam] followed
/// by the other entries in descending order.
void canonical_view(SinrVector v, int beam, std::span<double> out);

/// Wraps a beam-1 template into a beam-symmetric decision.
PredicateFn symmetrize(TemplateFn beam1_template);

struct ReportedSinr {
  int beam = 0;
  double sinr = 0.0;
  bool operator==(const ReportedSinr&) const = default;
};

/// One user's feedback packet; no reports means the no-feedback symbol.
struct FeedbackDecision {
  std::vector<ReportedSinr> reports;

  bool is_empty() const { return reports.empty(); }
  std::vector<int> requested() const;
  BeamMask mask() const;
  bool operator==(const FeedbackDecision&) const = default;
};

/// Decentralized feedback rule of a single user. Immutable after construction.
class FeedbackRule {
 public:
  static FeedbackRule general_threshold(int user, double tau);
  static FeedbackRule max_sinr_threshold(int user, double tau);
  static FeedbackRule box_union(int user, BoxUnionRegion region);
  static FeedbackRule max_sinr_box_union(int user, IntervalUnion region);
  /// Raw predicate; no symmetry is imposed.
  static FeedbackRule predicate(int user, PredicateFn fn, std::string name = "predicate");
  /// Predicate built from a beam-1 template and symmetrized over beams.
  static FeedbackRule symmetric_predicate(int user, TemplateFn beam1_template,
                                          std::string name = "symmetric-predicate");

  RuleKind kind() const;
  int user_index() const { return user_; }
  /// Threshold of GeneralThreshold / MaxSinrThreshold rules.
  double threshold() const;
  const BoxUnionRegion& box_region() const;
  const IntervalUnion& max_region() const;
  const std::string& name() const { return name_; }

  /// Requested beams; MTFP-style rules never request more than the argmax beam.
  BeamMask requests(SinrVector v) const;
  bool selects_beam(SinrVector v, int beam) const { return mask_has(requests(v), beam); }
  bool is_max_sinr_kind() const;
  /// True for kinds that are beam symmetric by construction.
  bool symmetric_by_construction() const;
  /// Beam count the rule is bound to, or 0 if it adapts to any M.
  int required_beams() const;

  FeedbackRule with_user(int user) const;
  /// Same kind and parameters; predicates compare by identity.
  bool same_rule(const FeedbackRule& other) const;

 private:
  struct Threshold {
    double tau;
  };
  struct MaxThreshold {
    double tau;
  };
  struct PredicateRef {
    std::shared_ptr<const PredicateFn> fn;
    bool symmetrized;
  };
  using Params = std::variant<Threshold, MaxThreshold, BoxUnionRegion, IntervalUnion, PredicateRef>;

  FeedbackRule(int user, Params params, std::string name)
      : user_(user), params_(std::move(params)), name_(std::move(name)) {}

  int user_;
  Params params_;
  std::string name_;
};

/// Validates v against rule and returns the packet.
FeedbackDecision evaluate_rule(const FeedbackRule& rule, SinrVector v);

/// System-wide policy (F_1, ..., F_n).
struct PolicySpec {
  std::vector<FeedbackRule> rules;
  std::string label;

  static PolicySpec homogeneous(int users, const FeedbackRule& rule, std::string label);

  int users() const { return static_cast<int>(rules.size()); }
  /// Throws ContractError when rules[i].user_index() != i.
  void validate() const;
  bool is_homogeneous() const;
  bool all_max_sinr_kind() const;
  PolicySpec with_rule(int user, FeedbackRule rule) const;
};

/// Never-feed-back rule: threshold at +inf.
FeedbackRule never_feedback_rule(int user);
/// Always-feed-back rule: threshold 0.
FeedbackRule always_feedback_rule(int user);

struct ProbabilityEstimate {
  double value = 0.0;
  double std_error = 0.0;
  bool exact = false;
  std::int64_t samples = 0;
};

/// P(rule selects beam 1) under the rule owner's law. Closed form (through the
/// fading quantile machinery) for threshold kinds; otherwise a seeded Monte
/// Carlo estimate. Symmetric kinds average the indicator over all beams, which
/// is unbiased by exchangeability and has lower variance.
ProbabilityEstimate beam1_feedback_region_probability(const FeedbackRule& rule, const ChannelModel& model,
                                                      std::int64_t sample_count, std::uint64_t seed);

struct SymmetryViolation {
  std::size_t probe = 0;
  std::vector<int> permutation;
  BeamMask expected = 0;
  BeamMask actual = 0;
};

struct SymmetryReport {
  bool symmetric = true;
  std::optional<SymmetryViolation> violation;
  /// Deviations seen only on probes with exactly tied entries; the lowest-index
  /// argmax tie-break is not permutation invariant there, a measure-zero event.
  std::size_t tie_deviations = 0;
  std::size_t checks = 0;
};

/// Checks requested(P(v)) == P^{-1}(requested(v)) for every probe and every
/// beam permutation, where P(v)_k = v_{pi(k)}.
SymmetryReport check_beam_symmetry(const FeedbackRule& rule, const std::vector<std::vector<double>>& probes);

/// Draws probe vectors from the model's law for symmetry checks.
std::vector<std::vector<double>> symmetry_probes(const ChannelModel& model, int user, std::size_t count,
                                                 std::uint64_t seed);

/// Random beam-1 box-union template with 1..max_boxes boxes.
FeedbackRule random_box_union_rule(int user, int beams, Substream& rng, int max_boxes = 3);
/// Random union of 1..max_intervals intervals on the maximum SINR.
FeedbackRule random_max_sinr_box_union_rule(int user, Substream& rng, int max_intervals = 3);

PolicySpec random_box_union_policy(int users, int beams, std::uint64_t seed, std::string label = {});
PolicySpec random_max_sinr_box_union_policy(int users, std::uint64_t seed, std::string label = {});

}  // namespace obf

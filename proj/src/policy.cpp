#include "obf/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>

#include "obf/error.hpp"
#include "obf/parallel.hpp"
#include "obf/stats.hpp"

namespace obf {

namespace {

constexpr int kMaxBeams = 64;
constexpr std::size_t kAllPermutationLimit = 8;

bool has_exact_tie(SinrVector v) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

BeamMask permuted_mask(BeamMask base, const std::vector<int>& perm) {
  BeamMask out = 0;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    if (mask_has(base, perm[k])) out |= BeamMask{1} << k;
  }
  return out;
}

}  // namespace

bool Box::contains(SinrVector canonical) const {
  for (std::size_t k = 0; k < sides.size(); ++k) {
    if (!sides[k].contains(canonical[k])) return false;
  }
  return true;
}

bool BoxUnionRegion::contains(SinrVector canonical) const {
  return std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return b.contains(canonical); });
}

bool IntervalUnion::contains(double x) const {
  return std::any_of(intervals.begin(), intervals.end(), [&](const Interval& i) { return i.contains(x); });
}

std::string to_string(RuleKind kind) {
  switch (kind) {
    case RuleKind::GeneralThreshold: return "gtfp";
    case RuleKind::MaxSinrThreshold: return "mtfp";
    case RuleKind::BoxUnion: return "box_union";
    case RuleKind::MaxSinrBoxUnion: return "max_sinr_box_union";
    case RuleKind::Predicate: return "predicate";
  }
  return "unknown";
}

void canonical_view(SinrVector v, int beam, std::span<double> out) {
  out[0] = v[static_cast<std::size_t>(beam)];
  std::size_t j = 1;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (static_cast<int>(k) != beam) out[j++] = v[k];
  }
  std::sort(out.begin() + 1, out.begin() + static_cast<std::ptrdiff_t>(v.size()), std::greater<>());
}

PredicateFn symmetrize(TemplateFn beam1_template) {
  return [tmpl = std::move(beam1_template)](SinrVector v) {
    std::array<double, kMaxBeams> buffer{};
    const std::span<double> canon(buffer.data(), v.size());
    BeamMask mask = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      canonical_view(v, static_cast<int>(k), canon);
      if (tmpl(canon)) mask |= BeamMask{1} << k;
    }
    return mask;
  };
}

std::vector<int> FeedbackDecision::requested() const {
  std::vector<int> out;
  out.reserve(reports.size());
  for (const auto& r : reports) out.push_back(r.beam);
  return out;
}

BeamMask FeedbackDecision::mask() const {
  BeamMask m = 0;
  for (const auto& r : reports) m |= BeamMask{1} << r.beam;
  return m;
}

FeedbackRule FeedbackRule::general_threshold(int user, double tau) {
  if (std::isnan(tau) || tau < 0.0) throw ConfigError("threshold must be nonnegative");
  return FeedbackRule(user, Threshold{tau}, "gtfp");
}

FeedbackRule FeedbackRule::max_sinr_threshold(int user, double tau) {
  if (std::isnan(tau) || tau < 0.0) throw ConfigError("threshold must be nonnegative");
  return FeedbackRule(user, MaxThreshold{tau}, "mtfp");
}

FeedbackRule FeedbackRule::box_union(int user, BoxUnionRegion region) {
  const int beams = region.beams();
  for (const auto& box : region.boxes) {
    if (static_cast<int>(box.sides.size()) != beams || beams < 1) {
      throw ConfigError("every box must have one side per beam");
    }
    for (const auto& side : box.sides) {
      if (std::isnan(side.lo) || std::isnan(side.hi) || side.lo < 0.0 || side.hi < side.lo) {
        throw ConfigError("box sides must be intervals in the nonnegative orthant");
      }
    }
  }
  return FeedbackRule(user, std::move(region), "box_union");
}

FeedbackRule FeedbackRule::max_sinr_box_union(int user, IntervalUnion region) {
  for (const auto& side : region.intervals) {
    if (std::isnan(side.lo) || std::isnan(side.hi) || side.lo < 0.0 || side.hi < side.lo) {
      throw ConfigError("max-SINR region intervals must be nonnegative");
    }
  }
  return FeedbackRule(user, std::move(region), "max_sinr_box_union");
}

FeedbackRule FeedbackRule::predicate(int user, PredicateFn fn, std::string name) {
  return FeedbackRule(user, PredicateRef{std::make_shared<const PredicateFn>(std::move(fn)), false},
                      std::move(name));
}

FeedbackRule FeedbackRule::symmetric_predicate(int user, TemplateFn beam1_template, std::string name) {
  return FeedbackRule(
      user, PredicateRef{std::make_shared<const PredicateFn>(symmetrize(std::move(beam1_template))), true},
      std::move(name));
}

RuleKind FeedbackRule::kind() const {
  switch (params_.index()) {
    case 0: return RuleKind::GeneralThreshold;
    case 1: return RuleKind::MaxSinrThreshold;
    case 2: return RuleKind::BoxUnion;
    case 3: return RuleKind::MaxSinrBoxUnion;
    default: return RuleKind::Predicate;
  }
}

double FeedbackRule::threshold() const {
  if (const auto* t = std::get_if<Threshold>(&params_)) return t->tau;
  if (const auto* t = std::get_if<MaxThreshold>(&params_)) return t->tau;
  throw KindError("rule '" + name_ + "' has no threshold");
}

const BoxUnionRegion& FeedbackRule::box_region() const {
  if (const auto* r = std::get_if<BoxUnionRegion>(&params_)) return *r;
  throw KindError("rule '" + name_ + "' is not a box union");
}

const IntervalUnion& FeedbackRule::max_region() const {
  if (const auto* r = std::get_if<IntervalUnion>(&params_)) return *r;
  throw KindError("rule '" + name_ + "' is not a max-SINR box union");
}

BeamMask FeedbackRule::requests(SinrVector v) const {
  struct Visitor {
    SinrVector v;
    BeamMask operator()(const Threshold& t) const {
      BeamMask mask = 0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k] >= t.tau) mask |= BeamMask{1} << k;
      }
      return mask;
    }
    BeamMask operator()(const MaxThreshold& t) const {
      const int b = best_beam(v);
      return v[static_cast<std::size_t>(b)] >= t.tau ? BeamMask{1} << b : 0;
    }
    BeamMask operator()(const BoxUnionRegion& region) const {
      if (region.beams() != 0 && static_cast<std::size_t>(region.beams()) != v.size()) {
        throw ShapeError("box-union rule bound to a different beam count");
      }
      std::array<double, kMaxBeams> buffer{};
      const std::span<double> canon(buffer.data(), v.size());
      BeamMask mask = 0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        canonical_view(v, static_cast<int>(k), canon);
        if (region.contains(canon)) mask |= BeamMask{1} << k;
      }
      return mask;
    }
    BeamMask operator()(const IntervalUnion& region) const {
      const int b = best_beam(v);
      return region.contains(v[static_cast<std::size_t>(b)]) ? BeamMask{1} << b : 0;
    }
    BeamMask operator()(const PredicateRef& p) const { return (*p.fn)(v); }
  };
  return std::visit(Visitor{v}, params_);
}

bool FeedbackRule::is_max_sinr_kind() const {
  return kind() == RuleKind::MaxSinrThreshold || kind() == RuleKind::MaxSinrBoxUnion;
}

bool FeedbackRule::symmetric_by_construction() const {
  if (const auto* p = std::get_if<PredicateRef>(&params_)) return p->symmetrized;
  return true;
}

int FeedbackRule::required_beams() const {
  if (const auto* r = std::get_if<BoxUnionRegion>(&params_)) return r->beams();
  return 0;
}

FeedbackRule FeedbackRule::with_user(int user) const {
  FeedbackRule copy = *this;
  copy.user_ = user;
  return copy;
}

bool FeedbackRule::same_rule(const FeedbackRule& other) const {
  if (params_.index() != other.params_.index()) return false;
  struct Visitor {
    const Params& other;
    bool operator()(const Threshold& t) const { return t.tau == std::get<Threshold>(other).tau; }
    bool operator()(const MaxThreshold& t) const { return t.tau == std::get<MaxThreshold>(other).tau; }
    bool operator()(const BoxUnionRegion& r) const { return r == std::get<BoxUnionRegion>(other); }
    bool operator()(const IntervalUnion& r) const { return r == std::get<IntervalUnion>(other); }
    bool operator()(const PredicateRef& p) const { return p.fn == std::get<PredicateRef>(other).fn; }
  };
  return std::visit(Visitor{other.params_}, params_);
}

FeedbackDecision evaluate_rule(const FeedbackRule& rule, SinrVector v) {
  if (v.empty() || v.size() > static_cast<std::size_t>(kMaxBeams)) {
    throw ShapeError("SINR vector must have between 1 and 64 entries");
  }
  if (rule.required_beams() != 0 && static_cast<std::size_t>(rule.required_beams()) != v.size()) {
    throw ShapeError("SINR vector length does not match the rule's beam count");
  }
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) throw DomainError("SINR entries must be finite and nonnegative");
  }
  const BeamMask mask = rule.requests(v);
  FeedbackDecision decision;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (mask_has(mask, static_cast<int>(k))) decision.reports.push_back({static_cast<int>(k), v[k]});
  }
  return decision;
}

PolicySpec PolicySpec::homogeneous(int users, const FeedbackRule& rule, std::string label) {
  PolicySpec spec;
  spec.label = std::move(label);
  spec.rules.reserve(static_cast<std::size_t>(users));
  for (int i = 0; i < users; ++i) spec.rules.push_back(rule.with_user(i));
  return spec;
}

void PolicySpec::validate() const {
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (rules[i].user_index() != static_cast<int>(i)) {
      throw ContractError("rule " + std::to_string(i) + " is owned by user " +
                          std::to_string(rules[i].user_index()));
    }
  }
}

bool PolicySpec::is_homogeneous() const {
  return std::all_of(rules.begin(), rules.end(), [&](const FeedbackRule& r) { return r.same_rule(rules.front()); });
}

bool PolicySpec::all_max_sinr_kind() const {
  return std::all_of(rules.begin(), rules.end(), [](const FeedbackRule& r) { return r.is_max_sinr_kind(); });
}

PolicySpec PolicySpec::with_rule(int user, FeedbackRule rule) const {
  PolicySpec copy = *this;
  copy.rules.at(static_cast<std::size_t>(user)) = rule.with_user(user);
  return copy;
}

FeedbackRule never_feedback_rule(int user) { return FeedbackRule::general_threshold(user, kNeverFeedback); }

FeedbackRule always_feedback_rule(int user) { return FeedbackRule::general_threshold(user, 0.0); }

ProbabilityEstimate beam1_feedback_region_probability(const FeedbackRule& rule, const ChannelModel& model,
                                                      std::int64_t sample_count, std::uint64_t seed) {
  if (sample_count < 1000) throw ConfigError("feedback-region estimation needs at least 1000 samples");
  model.validate();
  const int user = rule.user_index();
  if (user < 0 || user >= model.users) throw ShapeError("rule owner is outside the model's user range");
  if (rule.required_beams() != 0 && rule.required_beams() != model.beams) {
    throw ShapeError("rule beam count does not match the model");
  }

  if (rule.kind() == RuleKind::GeneralThreshold) {
    return {marginal_survival(model, rule.threshold(), user), 0.0, true, 0};
  }
  if (rule.kind() == RuleKind::MaxSinrThreshold) {
    return {max_sinr_survival(model, rule.threshold(), user) / static_cast<double>(model.beams), 0.0, true, 0};
  }

  const SinrSampler sampler(model);
  const bool pooled = rule.symmetric_by_construction();
  const auto total = static_cast<std::size_t>(sample_count);
  std::vector<RunningStats> partial(parallel::block_count(total));
  parallel::for_each_block(total, [&](std::size_t b, std::size_t begin, std::size_t end) {
    std::vector<double> v(static_cast<std::size_t>(model.beams));
    RunningStats acc;
    for (std::size_t j = begin; j < end; ++j) {
      sampler.sample(user, j, seed, StreamDomain::Calibration, v);
      const BeamMask mask = rule.requests(v);
      acc.add(pooled ? static_cast<double>(std::popcount(mask)) / static_cast<double>(model.beams)
                     : static_cast<double>(mask & 1U));
    }
    partial[b] = acc;
  });
  RunningStats all;
  for (const auto& p : partial) all.merge(p);
  return {all.mean, all.std_error(), false, sample_count};
}

SymmetryReport check_beam_symmetry(const FeedbackRule& rule, const std::vector<std::vector<double>>& probes) {
  SymmetryReport report;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto& v = probes[p];
    const std::size_t beams = v.size();
    const BeamMask base = rule.requests(v);
    const bool tied = has_exact_tie(v);

    std::vector<std::vector<int>> perms;
    std::vector<int> perm(beams);
    std::iota(perm.begin(), perm.end(), 0);
    if (beams <= kAllPermutationLimit) {
      do {
        perms.push_back(perm);
      } while (std::next_permutation(perm.begin(), perm.end()));
    } else {
      // Transpositions with beam 0 plus a cyclic shift generate the full group.
      for (std::size_t k = 1; k < beams; ++k) {
        auto t = perm;
        std::swap(t[0], t[k]);
        perms.push_back(t);
      }
      auto shift = perm;
      std::rotate(shift.begin(), shift.begin() + 1, shift.end());
      perms.push_back(shift);
    }

    std::vector<double> w(beams);
    for (const auto& pi : perms) {
      for (std::size_t k = 0; k < beams; ++k) w[k] = v[static_cast<std::size_t>(pi[k])];
      const BeamMask expected = permuted_mask(base, pi);
      const BeamMask actual = rule.requests(w);
      ++report.checks;
      if (expected == actual) continue;
      if (tied) {
        ++report.tie_deviations;
        continue;
      }
      if (report.symmetric) {
        report.symmetric = false;
        report.violation = SymmetryViolation{p, pi, expected, actual};
      }
    }
  }
  return report;
}

std::vector<std::vector<double>> symmetry_probes(const ChannelModel& model, int user, std::size_t count,
                                                 std::uint64_t seed) {
  const SinrSampler sampler(model);
  std::vector<std::vector<double>> probes(count, std::vector<double>(static_cast<std::size_t>(model.beams)));
  for (std::size_t j = 0; j < count; ++j) sampler.sample(user, j, seed, StreamDomain::Probes, probes[j]);
  return probes;
}

namespace {

Interval random_open_interval(Substream& rng, double lo_max) {
  const double lo = lo_max * rng.uniform();
  if (rng.uniform() < 0.35) return {lo, std::numeric_limits<double>::infinity()};
  return {lo, lo + 0.1 + 1.4 * rng.uniform()};
}

}  // namespace

FeedbackRule random_box_union_rule(int user, int beams, Substream& rng, int max_boxes) {
  BoxUnionRegion region;
  const int count = 1 + static_cast<int>(rng.uniform() * max_boxes);
  for (int b = 0; b < count; ++b) {
    Box box;
    box.sides.push_back(random_open_interval(rng, 1.5));
    for (int k = 1; k < beams; ++k) {
      if (rng.uniform() < 0.5) {
        box.sides.push_back({});
        continue;
      }
      const double cut = rng.uniform();
      box.sides.push_back(rng.uniform() < 0.5 ? Interval{0.0, cut}
                                              : Interval{cut, std::numeric_limits<double>::infinity()});
    }
    region.boxes.push_back(std::move(box));
  }
  return FeedbackRule::box_union(user, std::move(region));
}

FeedbackRule random_max_sinr_box_union_rule(int user, Substream& rng, int max_intervals) {
  IntervalUnion region;
  const int count = 1 + static_cast<int>(rng.uniform() * max_intervals);
  for (int b = 0; b < count; ++b) region.intervals.push_back(random_open_interval(rng, 2.5));
  return FeedbackRule::max_sinr_box_union(user, std::move(region));
}

PolicySpec random_box_union_policy(int users, int beams, std::uint64_t seed, std::string label) {
  PolicySpec spec;
  spec.label = label.empty() ? "box-union-" + std::to_string(seed) : std::move(label);
  for (int i = 0; i < users; ++i) {
    Substream rng(seed, StreamDomain::PolicyDraw, 0, static_cast<std::uint64_t>(i));
    spec.rules.push_back(random_box_union_rule(i, beams, rng));
  }
  return spec;
}

PolicySpec random_max_sinr_box_union_policy(int users, std::uint64_t seed, std::string label) {
  PolicySpec spec;
  spec.label = label.empty() ? "max-sinr-box-union-" + std::to_string(seed) : std::move(label);
  for (int i = 0; i < users; ++i) {
    Substream rng(seed, StreamDomain::PolicyDraw, 1, static_cast<std::uint64_t>(i));
    spec.rules.push_back(random_max_sinr_box_union_rule(i, rng));
  }
  return spec;
}

}  // namespace obf

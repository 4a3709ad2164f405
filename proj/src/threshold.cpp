#include "obf/threshold.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "obf/parallel.hpp"
#include "obf/stats.hpp"
#include "obf/trial_loop.hpp"

namespace obf {

namespace {

constexpr std::size_t kSymmetryProbeCount = 256;
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_model_policy(const PolicySpec& policy, const ChannelModel& model) {
  model.validate();
  policy.validate();
  if (policy.users() != model.users) {
    throw ShapeError("policy has " + std::to_string(policy.users()) + " rules but the model has " +
                     std::to_string(model.users) + " users");
  }
}

// Threshold with exactly `count` of `values` at or above it: the midpoint of
// the count-th and (count+1)-th largest values.
double threshold_for_count(std::vector<double>& values, std::size_t count) {
  if (count == 0) return kInf;
  if (count >= values.size()) return 0.0;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(count), values.end(),
                   std::greater<>());
  const double below = values[count];
  const double kth = *std::min_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(count));
  if (kth == below) return kth;
  return 0.5 * (kth + below);
}

struct EmpiricalMatch {
  double probability;
  double std_error;
  double tau;
};

EmpiricalMatch empirical_match(const FeedbackRule& rule, const ChannelModel& model, int user,
                               std::int64_t samples, std::uint64_t seed, MatchKind kind) {
  const SinrSampler sampler(model);
  const auto n = static_cast<std::size_t>(samples);
  const auto beams = static_cast<std::size_t>(model.beams);
  const bool pooled_values = kind == MatchKind::Gtfp;
  std::vector<double> values(pooled_values ? n * beams : n);
  std::vector<RunningStats> partial(parallel::block_count(n));
  std::vector<std::size_t> counts(partial.size(), 0);

  parallel::for_each_block(n, [&](std::size_t b, std::size_t begin, std::size_t end) {
    std::vector<double> v(beams);
    RunningStats acc;
    std::size_t c = 0;
    for (std::size_t j = begin; j < end; ++j) {
      sampler.sample(user, j, seed, StreamDomain::Calibration, v);
      const BeamMask mask = rule.requests(v);
      const auto hits = static_cast<std::size_t>(std::popcount(mask));
      c += hits;
      acc.add(static_cast<double>(hits) / static_cast<double>(beams));
      if (pooled_values) {
        std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(j * beams));
      } else {
        values[j] = max_sinr(v);
      }
    }
    partial[b] = acc;
    counts[b] = c;
  });

  RunningStats all;
  std::size_t count = 0;
  for (std::size_t b = 0; b < partial.size(); ++b) {
    all.merge(partial[b]);
    count += counts[b];
  }
  const double p = static_cast<double>(count) / static_cast<double>(n * beams);
  return {p, all.std_error(), threshold_for_count(values, count)};
}

MatchedPolicyPair match_impl(const PolicySpec& policy, const ChannelModel& model, MatchKind kind,
                             std::int64_t samples, std::uint64_t seed) {
  check_model_policy(policy, model);
  if (samples < 1000) throw ConfigError("matching needs at least 1000 calibration samples");
  if (kind == MatchKind::Mtfp && !policy.all_max_sinr_kind()) {
    throw KindError("maximum-SINR matching needs every rule to be of maximum-SINR kind");
  }

  const auto n = static_cast<std::size_t>(policy.users());
  const double beams = static_cast<double>(model.beams);
  MatchedPolicyPair pair;
  pair.original = policy;
  pair.kind = kind;
  pair.matched.label = policy.label + (kind == MatchKind::Gtfp ? "/gtfp" : "/mtfp");
  pair.thresholds.resize(n);
  pair.original_probabilities.resize(n);
  pair.original_std_errors.assign(n, 0.0);
  pair.estimated.assign(n, false);
  pair.matched_probabilities.resize(n);

  for (std::size_t idx = 0; idx < n; ++idx) {
    const int i = static_cast<int>(idx);
    const FeedbackRule& rule = policy.rules[idx];
    if (rule.required_beams() != 0 && rule.required_beams() != model.beams) {
      throw ShapeError("rule '" + rule.name() + "' is bound to a different beam count");
    }
    double tau = 0.0;
    double p = 0.0;
    if (rule.kind() == RuleKind::GeneralThreshold) {
      tau = rule.threshold();
      p = marginal_survival(model, tau, i);
    } else if (rule.kind() == RuleKind::MaxSinrThreshold) {
      p = max_sinr_survival(model, rule.threshold(), i) / beams;
      tau = kind == MatchKind::Mtfp ? rule.threshold() : upper_quantile(model, p, SinrStatistic::Beam1, i);
    } else {
      if (!rule.symmetric_by_construction()) {
        auto report = check_beam_symmetry(rule, symmetry_probes(model, i, kSymmetryProbeCount, seed));
        if (!report.symmetric) {
          throw SymmetryError("rule '" + rule.name() + "' of user " + std::to_string(i + 1) +
                                  " is not beam symmetric",
                              std::move(report));
        }
      }
      const auto e = empirical_match(rule, model, i, samples, seed, kind);
      tau = e.tau;
      p = e.probability;
      pair.original_std_errors[idx] = e.std_error;
      pair.estimated[idx] = true;
    }
    pair.thresholds[idx] = tau;
    pair.original_probabilities[idx] = p;
    if (kind == MatchKind::Gtfp) {
      pair.matched.rules.push_back(FeedbackRule::general_threshold(i, tau));
      pair.matched_probabilities[idx] = marginal_survival(model, tau, i);
    } else {
      pair.matched.rules.push_back(FeedbackRule::max_sinr_threshold(i, tau));
      pair.matched_probabilities[idx] = max_sinr_survival(model, tau, i) / beams;
    }
    pair.load_original += p;
    pair.load_matched += pair.matched_probabilities[idx];
  }
  pair.tolerance_achieved = std::abs(pair.load_original - pair.load_matched);
  return pair;
}

// Largest beam-`beam` SINR among requesting users other than `skip`; 0 if none.
double best_other(const SinrMatrix& gamma, std::span<const BeamMask> masks, int beam, int skip) {
  double best = 0.0;
  for (int i = 0; i < gamma.users(); ++i) {
    if (i == skip || !mask_has(masks[static_cast<std::size_t>(i)], beam)) continue;
    best = std::max(best, gamma.at(beam, i));
  }
  return best;
}

double winning_sinr(const SinrMatrix& gamma, std::span<const BeamMask> masks, int beam) {
  const int w = beam_winner(gamma, masks, beam);
  return w < 0 ? 0.0 : gamma.at(beam, w);
}

EventClass compare_winners(double before, double after) {
  if (after < before) return EventClass::Loss;
  if (after > before) return EventClass::Gain;
  return EventClass::Neutral;
}

EventClass lemma_class(const RegionPartition& part, SinrVector own, double other_best) {
  if (!(other_best < part.statistic(own))) return EventClass::Neutral;
  if (part.in_loss_region(own)) return EventClass::Loss;
  if (part.in_gain_region(own)) return EventClass::Gain;
  return EventClass::Neutral;
}

void tally(EventFrequencies& f, EventClass e) {
  switch (e) {
    case EventClass::Loss: ++f.loss; break;
    case EventClass::Gain: ++f.gain; break;
    case EventClass::Neutral: ++f.neutral; break;
  }
}

void merge_frequencies(EventFrequencies& into, const EventFrequencies& from) {
  into.loss += from.loss;
  into.gain += from.gain;
  into.neutral += from.neutral;
}

nlohmann::json number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

nlohmann::json numbers(const std::vector<double>& xs) {
  auto out = nlohmann::json::array();
  for (double x : xs) out.push_back(number(x));
  return out;
}

nlohmann::json to_json(const EventFrequencies& f) {
  return {{"loss", f.loss}, {"gain", f.gain}, {"neutral", f.neutral}};
}

}  // namespace

std::string to_string(MatchKind kind) { return kind == MatchKind::Gtfp ? "gtfp" : "mtfp"; }

MatchKind match_kind_from_string(std::string_view name) {
  if (name == "gtfp") return MatchKind::Gtfp;
  if (name == "mtfp") return MatchKind::Mtfp;
  throw ConfigError("match kind must be 'gtfp' or 'mtfp'");
}

std::string to_string(EventClass event) {
  switch (event) {
    case EventClass::Loss: return "loss";
    case EventClass::Gain: return "gain";
    case EventClass::Neutral: return "neutral";
  }
  return "neutral";
}

MatchedPolicyPair match_gtfp(const PolicySpec& policy, const ChannelModel& model, std::int64_t samples,
                             std::uint64_t seed) {
  return match_impl(policy, model, MatchKind::Gtfp, samples, seed);
}

MatchedPolicyPair match_mtfp(const PolicySpec& policy, const ChannelModel& model, std::int64_t samples,
                             std::uint64_t seed) {
  return match_impl(policy, model, MatchKind::Mtfp, samples, seed);
}

MatchedPolicyPair match_policy(const PolicySpec& policy, const ChannelModel& model, MatchKind kind,
                               std::int64_t samples, std::uint64_t seed) {
  return match_impl(policy, model, kind, samples, seed);
}

PolicySpec one_user_switch(const PolicySpec& policy, const MatchedPolicyPair& pair, int k) {
  if (pair.users() != policy.users() || pair.matched.users() != policy.users()) {
    throw ShapeError("matched pair does not cover the policy's users");
  }
  if (k < 0 || k > policy.users()) throw std::out_of_range("switch index must lie in [0, n]");
  PolicySpec out = policy;
  for (int i = 0; i < k; ++i) out.rules[static_cast<std::size_t>(i)] = pair.matched.rules[static_cast<std::size_t>(i)];
  out.label = policy.label + "/switch-" + std::to_string(k);
  return out;
}

RegionPartition RegionPartition::for_user(const MatchedPolicyPair& pair, int user) {
  if (user < 0 || user >= pair.users()) throw std::out_of_range("user index outside the matched pair");
  const auto u = static_cast<std::size_t>(user);
  return RegionPartition(pair.original.rules[u], pair.thresholds[u], pair.kind);
}

double RegionPartition::statistic(SinrVector v, int beam) const {
  return kind_ == MatchKind::Gtfp ? v[static_cast<std::size_t>(beam)] : max_sinr(v);
}

bool RegionPartition::in_loss_region(SinrVector v, int beam) const {
  return in_feedback_region(v, beam) && statistic(v, beam) < tau_;
}

bool RegionPartition::in_retained_region(SinrVector v, int beam) const {
  return in_feedback_region(v, beam) && statistic(v, beam) >= tau_;
}

bool RegionPartition::in_gain_region(SinrVector v, int beam) const {
  if (in_feedback_region(v, beam) || statistic(v, beam) < tau_) return false;
  return kind_ == MatchKind::Gtfp || best_beam(v) == beam;
}

EventClass classify_event_by_rate(const PolicySpec& f, const PolicySpec& f1, const SinrMatrix& gamma, int user) {
  if (f.users() != f1.users() || f.users() != gamma.users()) {
    throw ShapeError("policies and SINR matrix disagree on the user count");
  }
  if (user < 0 || user >= f.users()) throw std::out_of_range("user index outside the policy");
  for (int i = 0; i < f.users(); ++i) {
    if (i != user && !f.rules[static_cast<std::size_t>(i)].same_rule(f1.rules[static_cast<std::size_t>(i)])) {
      throw ContractError("policies differ outside the switched user");
    }
  }
  std::vector<BeamMask> a(static_cast<std::size_t>(gamma.users()));
  std::vector<BeamMask> b(a.size());
  decide_feedback(f, gamma, a);
  decide_feedback(f1, gamma, b);
  return compare_winners(winning_sinr(gamma, a, 0), winning_sinr(gamma, b, 0));
}

EventClass classify_event_by_lemma(const MatchedPolicyPair& pair, const SinrMatrix& gamma) {
  if (gamma.users() != pair.users()) throw ShapeError("SINR matrix does not match the pair's user count");
  std::vector<BeamMask> masks(static_cast<std::size_t>(gamma.users()));
  decide_feedback(pair.original, gamma, masks);
  const auto part = RegionPartition::for_user(pair, 0);
  return lemma_class(part, gamma.column(0), best_other(gamma, masks, 0, 0));
}

namespace {

struct Theorem1Accumulator {
  detail::RateAccumulator original;
  detail::RateAccumulator switched;
  RunningStats difference;
  EventFrequencies events;
  std::int64_t disagreements = 0;
  RunningStats loss_rate;
  std::int64_t loss_violations = 0;
  RunningStats gain_rate;
  RunningStats gain_identity;
  std::int64_t gain_violations = 0;

  explicit Theorem1Accumulator(int beams = 0) : original(beams), switched(beams) {}

  void merge(const Theorem1Accumulator& o) {
    original.merge(o.original);
    switched.merge(o.switched);
    difference.merge(o.difference);
    merge_frequencies(events, o.events);
    disagreements += o.disagreements;
    loss_rate.merge(o.loss_rate);
    loss_violations += o.loss_violations;
    gain_rate.merge(o.gain_rate);
    gain_identity.merge(o.gain_identity);
    gain_violations += o.gain_violations;
  }
};

}  // namespace

Theorem1Report verify_theorem1(const PolicySpec& policy, const ChannelModel& model, MatchKind kind,
                               std::int64_t trials, std::uint64_t seed, const VerifyOptions& options) {
  check_model_policy(policy, model);
  if (trials < 100) throw ConfigError("verification needs at least 100 trials");
  const auto pair = match_policy(policy, model, kind, options.match_samples, options.match_seed);
  const PolicySpec f1 = one_user_switch(policy, pair, 1);
  const auto part = RegionPartition::for_user(pair, 0);
  const double tau = pair.thresholds[0];
  const double log_tau = std::log1p(tau);
  const auto n = static_cast<std::size_t>(model.users);

  const SinrSampler sampler(model);
  auto blocks = detail::run_trial_blocks(
      sampler, static_cast<std::size_t>(trials), seed, Theorem1Accumulator(model.beams),
      [&, a = std::vector<BeamMask>(n), b = std::vector<BeamMask>(n)](
          std::uint64_t, const SinrMatrix& gamma, Theorem1Accumulator& acc) mutable {
        decide_feedback(policy, gamma, a);
        std::copy(a.begin(), a.end(), b.begin());
        b[0] = f1.rules[0].requests(gamma.column(0));
        const double ra = detail::accumulate_rate(gamma, a, acc.original);
        const double rb = detail::accumulate_rate(gamma, b, acc.switched);
        acc.difference.add(rb - ra);

        const EventClass by_rate = compare_winners(winning_sinr(gamma, a, 0), winning_sinr(gamma, b, 0));
        const double other = best_other(gamma, a, 0, 0);
        const EventClass by_lemma = lemma_class(part, gamma.column(0), other);
        tally(acc.events, by_lemma);
        if (by_rate != by_lemma) ++acc.disagreements;

        const int w = beam_winner(gamma, a, 0);
        const double r1 = w < 0 ? 0.0 : std::log1p(gamma.at(0, w));
        const bool loss = by_lemma == EventClass::Loss;
        const bool gain = by_lemma == EventClass::Gain;
        acc.loss_rate.add(loss ? r1 : 0.0);
        if (loss && r1 > log_tau) ++acc.loss_violations;
        const double identity = std::log1p(other);
        acc.gain_rate.add(gain ? r1 : 0.0);
        acc.gain_identity.add(gain ? identity : 0.0);
        if (gain && r1 != identity) ++acc.gain_violations;
      });
  const auto acc = detail::merge_blocks(blocks, Theorem1Accumulator(model.beams));

  Theorem1Report report;
  report.label = policy.label;
  report.kind = kind;
  report.threshold = tau;
  report.rate_original = detail::finish_rate(acc.original, seed);
  report.rate_switched = detail::finish_rate(acc.switched, seed);
  report.mean_difference = acc.difference.mean;
  report.std_error = acc.difference.std_error();

  const double beams = static_cast<double>(model.beams);
  report.load_original = pair.load_original;
  double switched_load = pair.matched_probabilities[0];
  for (std::size_t i = 1; i < n; ++i) switched_load += pair.original_probabilities[i];
  report.load_switched = switched_load;
  report.load_tolerance_achieved = pair.tolerance_achieved;
  report.load_ok = pair.load_matched_within(load_tolerance(model.users));
  (void)beams;

  report.events = acc.events;
  report.classifier_disagreements = acc.disagreements;
  report.loss_rate = acc.loss_rate.mean;
  const double p_loss = static_cast<double>(acc.events.loss) / static_cast<double>(acc.events.total());
  report.loss_bound = acc.events.loss == 0 ? 0.0 : p_loss * log_tau;
  report.loss_bound_violations = acc.loss_violations;
  report.gain_rate = acc.gain_rate.mean;
  report.gain_identity = acc.gain_identity.mean;
  report.gain_identity_violations = acc.gain_violations;

  bool spots_ok = true;
  if (model.users > 1) {
    for (int s = 0; s < options.spot_checks; ++s) {
      SinrMatrix others(model.beams, model.users - 1);
      for (int i = 1; i < model.users; ++i) {
        sampler.sample(i, static_cast<std::uint64_t>(s), seed, StreamDomain::Conditional, others.column(i - 1));
      }
      const std::uint64_t draw_seed = mix64(seed + static_cast<std::uint64_t>(s) + 1);
      const auto d = paired_conditional_difference(policy, f1, model, others, options.spot_trials, draw_seed);
      SpotCheck spot;
      spot.draw = static_cast<std::uint64_t>(s);
      spot.mean_difference = d.mean_difference;
      spot.std_error = d.std_error;
      spot.pass = d.mean_difference >= -options.slack_se * d.std_error;
      spots_ok = spots_ok && spot.pass;
      report.spot_checks.push_back(spot);
    }
  }

  report.pass = report.mean_difference >= -options.slack_se * report.std_error && report.load_ok &&
                report.classifier_disagreements == 0 && report.loss_bound_violations == 0 &&
                report.gain_identity_violations == 0 && spots_ok;
  return report;
}

namespace {

struct ChainAccumulator {
  std::vector<RunningStats> rates;
  std::vector<RunningStats> differences;

  explicit ChainAccumulator(int users = 0)
      : rates(static_cast<std::size_t>(users + 1)), differences(static_cast<std::size_t>(users)) {}

  void merge(const ChainAccumulator& o) {
    for (std::size_t k = 0; k < rates.size(); ++k) rates[k].merge(o.rates[k]);
    for (std::size_t k = 0; k < differences.size(); ++k) differences[k].merge(o.differences[k]);
  }
};

double total_rate(const SinrMatrix& gamma, std::span<const BeamMask> masks) {
  double total = 0.0;
  for (int m = 0; m < gamma.beams(); ++m) total += std::log1p(winning_sinr(gamma, masks, m));
  return total;
}

}  // namespace

ChainReport verify_monotone_chain(const PolicySpec& policy, const ChannelModel& model, MatchKind kind,
                                  std::int64_t trials, std::uint64_t seed, const VerifyOptions& options) {
  check_model_policy(policy, model);
  if (trials < 100) throw ConfigError("verification needs at least 100 trials");
  const auto pair = match_policy(policy, model, kind, options.match_samples, options.match_seed);
  const auto n = static_cast<std::size_t>(model.users);

  const SinrSampler sampler(model);
  auto blocks = detail::run_trial_blocks(
      sampler, static_cast<std::size_t>(trials), seed, ChainAccumulator(model.users),
      [&, orig = std::vector<BeamMask>(n), matched = std::vector<BeamMask>(n),
       hybrid = std::vector<BeamMask>(n)](std::uint64_t, const SinrMatrix& gamma, ChainAccumulator& acc) mutable {
        decide_feedback(pair.original, gamma, orig);
        decide_feedback(pair.matched, gamma, matched);
        hybrid = orig;
        double previous = total_rate(gamma, hybrid);
        acc.rates[0].add(previous);
        for (std::size_t k = 1; k <= n; ++k) {
          hybrid[k - 1] = matched[k - 1];
          const double r = total_rate(gamma, hybrid);
          acc.rates[k].add(r);
          acc.differences[k - 1].add(r - previous);
          previous = r;
        }
      });
  const auto acc = detail::merge_blocks(blocks, ChainAccumulator(model.users));

  ChainReport report;
  report.label = policy.label;
  report.kind = kind;
  bool steps_ok = true;
  for (std::size_t k = 0; k <= n; ++k) {
    report.rates.push_back(acc.rates[k].mean);
    report.rate_std_errors.push_back(acc.rates[k].std_error());
    double load = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      load += i < k ? pair.matched_probabilities[i] : pair.original_probabilities[i];
    }
    report.loads.push_back(load);
  }
  for (std::size_t k = 1; k <= n; ++k) {
    ChainStep step;
    step.k = static_cast<int>(k);
    step.mean_difference = acc.differences[k - 1].mean;
    step.std_error = acc.differences[k - 1].std_error();
    step.pass = step.mean_difference >= -options.slack_se * step.std_error;
    steps_ok = steps_ok && step.pass;
    report.steps.push_back(step);
  }
  const double tol = load_tolerance(model.users);
  report.loads_agree = std::all_of(report.loads.begin(), report.loads.end(),
                                   [&](double l) { return std::abs(l - report.loads.front()) <= tol; });
  report.pass = steps_ok && report.loads_agree;
  return report;
}

namespace {

struct AuditAccumulator {
  EventFrequencies by_rate;
  EventFrequencies by_lemma;
  std::int64_t agreements = 0;
  std::int64_t disagreements = 0;
  std::vector<RunningStats> difference;
  std::vector<RunningStats> gain;
  std::vector<RunningStats> loss;

  explicit AuditAccumulator(int users = 0)
      : difference(static_cast<std::size_t>(users)),
        gain(static_cast<std::size_t>(users)),
        loss(static_cast<std::size_t>(users)) {}

  void merge(const AuditAccumulator& o) {
    merge_frequencies(by_rate, o.by_rate);
    merge_frequencies(by_lemma, o.by_lemma);
    agreements += o.agreements;
    disagreements += o.disagreements;
    for (std::size_t i = 0; i < difference.size(); ++i) {
      difference[i].merge(o.difference[i]);
      gain[i].merge(o.gain[i]);
      loss[i].merge(o.loss[i]);
    }
  }
};

}  // namespace

EventAudit audit_events(const MatchedPolicyPair& pair, const ChannelModel& model, std::int64_t matrices,
                        std::uint64_t seed, double slack_se) {
  check_model_policy(pair.original, model);
  if (matrices < 100) throw ConfigError("event audit needs at least 100 matrices");
  const PolicySpec f1 = one_user_switch(pair.original, pair, 1);
  const auto n = static_cast<std::size_t>(model.users);
  std::vector<RegionPartition> parts;
  for (int i = 0; i < model.users; ++i) parts.push_back(RegionPartition::for_user(pair, i));
  const double beams = static_cast<double>(model.beams);

  const SinrSampler sampler(model);
  auto blocks = detail::run_trial_blocks(
      sampler, static_cast<std::size_t>(matrices), seed, AuditAccumulator(model.users),
      [&, a = std::vector<BeamMask>(n), b = std::vector<BeamMask>(n)](
          std::uint64_t, const SinrMatrix& gamma, AuditAccumulator& acc) mutable {
        decide_feedback(pair.original, gamma, a);
        std::copy(a.begin(), a.end(), b.begin());
        b[0] = f1.rules[0].requests(gamma.column(0));
        const EventClass by_rate = compare_winners(winning_sinr(gamma, a, 0), winning_sinr(gamma, b, 0));
        const EventClass by_lemma = lemma_class(parts[0], gamma.column(0), best_other(gamma, a, 0, 0));
        tally(acc.by_rate, by_rate);
        tally(acc.by_lemma, by_lemma);
        if (by_rate == by_lemma) {
          ++acc.agreements;
        } else {
          ++acc.disagreements;
        }
        // Region masses pooled over beams, as in the calibration estimator.
        for (std::size_t i = 0; i < n; ++i) {
          const auto col = gamma.column(static_cast<int>(i));
          int g = 0;
          int l = 0;
          for (int m = 0; m < model.beams; ++m) {
            g += parts[i].in_gain_region(col, m) ? 1 : 0;
            l += parts[i].in_loss_region(col, m) ? 1 : 0;
          }
          acc.gain[i].add(g / beams);
          acc.loss[i].add(l / beams);
          acc.difference[i].add((g - l) / beams);
        }
      });
  const auto acc = detail::merge_blocks(blocks, AuditAccumulator(model.users));

  EventAudit audit;
  audit.by_rate = acc.by_rate;
  audit.by_lemma = acc.by_lemma;
  audit.agreements = acc.agreements;
  audit.disagreements = acc.disagreements;
  bool balanced = true;
  for (std::size_t i = 0; i < n; ++i) {
    MassBalance mb;
    mb.user = static_cast<int>(i);
    mb.gain_mass = acc.gain[i].mean;
    mb.loss_mass = acc.loss[i].mean;
    mb.difference = acc.difference[i].mean;
    const double se_test = acc.difference[i].std_error();
    const double se_cal = pair.original_std_errors[i];
    mb.std_error = std::sqrt(se_test * se_test + se_cal * se_cal);
    mb.pass = std::abs(mb.difference) <= slack_se * mb.std_error;
    balanced = balanced && mb.pass;
    audit.mass_balance.push_back(mb);
  }
  audit.pass = audit.disagreements == 0 && balanced;
  return audit;
}

nlohmann::json to_json(const MatchedPolicyPair& pair) {
  nlohmann::json j;
  j["label"] = pair.original.label;
  j["kind"] = to_string(pair.kind);
  j["thresholds"] = numbers(pair.thresholds);
  j["original_probabilities"] = numbers(pair.original_probabilities);
  j["original_std_errors"] = numbers(pair.original_std_errors);
  j["estimated"] = pair.estimated;
  j["matched_probabilities"] = numbers(pair.matched_probabilities);
  j["load_original"] = number(pair.load_original);
  j["load_matched"] = number(pair.load_matched);
  j["tolerance_achieved"] = number(pair.tolerance_achieved);
  j["tolerance"] = load_tolerance(pair.users());
  return j;
}

nlohmann::json to_json(const RateEstimate& e) {
  return {{"mean", number(e.mean)},         {"std_error", number(e.std_error)},
          {"ci95_lo", number(e.ci95_lo)},   {"ci95_hi", number(e.ci95_hi)},
          {"trials", e.trials},             {"seed", e.seed},
          {"per_beam_means", numbers(e.per_beam_means)}, {"unit", to_string(e.unit)}};
}

nlohmann::json to_json(const Theorem1Report& r) {
  nlohmann::json j;
  j["label"] = r.label;
  j["kind"] = to_string(r.kind);
  j["threshold"] = number(r.threshold);
  j["rate_original"] = to_json(r.rate_original);
  j["rate_switched"] = to_json(r.rate_switched);
  j["mean_difference"] = number(r.mean_difference);
  j["std_error"] = number(r.std_error);
  j["load_original"] = number(r.load_original);
  j["load_switched"] = number(r.load_switched);
  j["load_tolerance_achieved"] = number(r.load_tolerance_achieved);
  j["load_ok"] = r.load_ok;
  j["events"] = to_json(r.events);
  j["classifier_disagreements"] = r.classifier_disagreements;
  j["loss_rate"] = number(r.loss_rate);
  j["loss_bound"] = number(r.loss_bound);
  j["loss_bound_violations"] = r.loss_bound_violations;
  j["gain_rate"] = number(r.gain_rate);
  j["gain_identity"] = number(r.gain_identity);
  j["gain_identity_violations"] = r.gain_identity_violations;
  auto spots = nlohmann::json::array();
  for (const auto& s : r.spot_checks) {
    spots.push_back({{"draw", s.draw},
                     {"mean_difference", number(s.mean_difference)},
                     {"std_error", number(s.std_error)},
                     {"pass", s.pass}});
  }
  j["spot_checks"] = spots;
  j["pass"] = r.pass;
  return j;
}

nlohmann::json to_json(const ChainReport& r) {
  nlohmann::json j;
  j["label"] = r.label;
  j["kind"] = to_string(r.kind);
  j["rates"] = numbers(r.rates);
  j["rate_std_errors"] = numbers(r.rate_std_errors);
  j["loads"] = numbers(r.loads);
  auto steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"k", s.k},
                     {"mean_difference", number(s.mean_difference)},
                     {"std_error", number(s.std_error)},
                     {"pass", s.pass}});
  }
  j["steps"] = steps;
  j["loads_agree"] = r.loads_agree;
  j["pass"] = r.pass;
  return j;
}

nlohmann::json to_json(const EventAudit& a) {
  nlohmann::json j;
  j["by_rate"] = to_json(a.by_rate);
  j["by_lemma"] = to_json(a.by_lemma);
  j["agreements"] = a.agreements;
  j["disagreements"] = a.disagreements;
  auto mass = nlohmann::json::array();
  for (const auto& m : a.mass_balance) {
    mass.push_back({{"user", m.user + 1},
                    {"gain_mass", number(m.gain_mass)},
                    {"loss_mass", number(m.loss_mass)},
                    {"difference", number(m.difference)},
                    {"std_error", number(m.std_error)},
                    {"pass", m.pass}});
  }
  j["mass_balance"] = mass;
  j["pass"] = a.pass;
  return j;
}

}  // namespace obf

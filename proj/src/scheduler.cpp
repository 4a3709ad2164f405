#include "obf/scheduler.hpp"

#include <cmath>
#include <numbers>

#include "obf/error.hpp"
#include "obf/trial_loop.hpp"

namespace obf {

namespace {

using detail::RateAccumulator;
using detail::accumulate_rate;

struct PairedAccumulator {
  RateAccumulator first;
  RateAccumulator second;
  RunningStats difference;

  explicit PairedAccumulator(int beams = 0) : first(beams), second(beams) {}

  void merge(const PairedAccumulator& other) {
    first.merge(other.first);
    second.merge(other.second);
    difference.merge(other.difference);
  }
};

void check_shapes(const PolicySpec& policy, const ChannelModel& model) {
  model.validate();
  policy.validate();
  if (policy.users() != model.users) {
    throw ShapeError("policy has " + std::to_string(policy.users()) + " rules but the model has " +
                     std::to_string(model.users) + " users");
  }
  for (const auto& r : policy.rules) {
    if (r.required_beams() != 0 && r.required_beams() != model.beams) {
      throw ShapeError("rule '" + r.name() + "' is bound to a different beam count");
    }
  }
}

void check_trials(std::int64_t trials) {
  if (trials < 100) throw ConfigError("rate estimation needs at least 100 trials");
}

}  // namespace

std::string to_string(RateUnit unit) { return unit == RateUnit::Nats ? "nats" : "bits"; }

RateUnit rate_unit_from_string(std::string_view name) {
  if (name == "nats") return RateUnit::Nats;
  if (name == "bits") return RateUnit::Bits;
  throw ConfigError("log base must be 'nats' or 'bits'");
}

RateEstimate RateEstimate::in(RateUnit target) const {
  if (target == unit) return *this;
  const double scale = target == RateUnit::Bits ? 1.0 / std::numbers::ln2 : std::numbers::ln2;
  RateEstimate out = *this;
  out.unit = target;
  out.mean *= scale;
  out.std_error *= scale;
  out.ci95_lo *= scale;
  out.ci95_hi *= scale;
  for (double& m : out.per_beam_means) m *= scale;
  return out;
}

void decide_feedback(const PolicySpec& policy, const SinrMatrix& gamma, std::span<BeamMask> masks) {
  for (int i = 0; i < gamma.users(); ++i) {
    masks[static_cast<std::size_t>(i)] = policy.rules[static_cast<std::size_t>(i)].requests(gamma.column(i));
  }
}

int beam_winner(const SinrMatrix& gamma, std::span<const BeamMask> masks, int beam) {
  int winner = -1;
  double best = 0.0;
  for (int i = 0; i < gamma.users(); ++i) {
    if (!mask_has(masks[static_cast<std::size_t>(i)], beam)) continue;
    const double g = gamma.at(beam, i);
    if (winner < 0 || g > best) {
      winner = i;
      best = g;
    }
  }
  return winner;
}

InstantaneousRate instantaneous_rate(const PolicySpec& policy, const SinrMatrix& gamma) {
  policy.validate();
  if (policy.users() != gamma.users()) throw ShapeError("policy length does not match SINR matrix columns");
  for (const auto& r : policy.rules) {
    if (r.required_beams() != 0 && r.required_beams() != gamma.beams()) {
      throw ShapeError("rule '" + r.name() + "' is bound to a different beam count");
    }
  }
  std::vector<BeamMask> masks(static_cast<std::size_t>(gamma.users()));
  decide_feedback(policy, gamma, masks);

  InstantaneousRate out;
  const auto beams = static_cast<std::size_t>(gamma.beams());
  out.per_beam.resize(beams);
  out.assignment.winner.resize(beams);
  out.assignment.winning_sinr.resize(beams);
  out.assignment.contenders.resize(beams);
  for (int m = 0; m < gamma.beams(); ++m) {
    const auto mu = static_cast<std::size_t>(m);
    for (int i = 0; i < gamma.users(); ++i) {
      if (mask_has(masks[static_cast<std::size_t>(i)], m)) out.assignment.contenders[mu].push_back(i);
    }
    const int w = beam_winner(gamma, masks, m);
    out.assignment.winner[mu] = w;
    out.assignment.winning_sinr[mu] = w < 0 ? 0.0 : gamma.at(m, w);
    out.per_beam[mu] = w < 0 ? 0.0 : std::log1p(gamma.at(m, w));
    out.total += out.per_beam[mu];
  }
  return out;
}

RateEstimate ergodic_rate(const PolicySpec& policy, const ChannelModel& model, std::int64_t trials,
                          std::uint64_t seed) {
  check_shapes(policy, model);
  check_trials(trials);
  const SinrSampler sampler(model);
  auto blocks = detail::run_trial_blocks(
      sampler, static_cast<std::size_t>(trials), seed, RateAccumulator(model.beams),
      [&, masks = std::vector<BeamMask>(static_cast<std::size_t>(model.users))](
          std::uint64_t, const SinrMatrix& gamma, RateAccumulator& acc) mutable {
        decide_feedback(policy, gamma, masks);
        accumulate_rate(gamma, masks, acc);
      });
  return detail::finish_rate(detail::merge_blocks(blocks, RateAccumulator(model.beams)), seed);
}

PairedRateEstimate paired_rate_difference(const PolicySpec& first, const PolicySpec& second,
                                          const ChannelModel& model, std::int64_t trials, std::uint64_t seed) {
  check_shapes(first, model);
  check_shapes(second, model);
  check_trials(trials);
  const SinrSampler sampler(model);
  const auto n = static_cast<std::size_t>(model.users);
  auto blocks = detail::run_trial_blocks(
      sampler, static_cast<std::size_t>(trials), seed, PairedAccumulator(model.beams),
      [&, a = std::vector<BeamMask>(n), b = std::vector<BeamMask>(n)](
          std::uint64_t, const SinrMatrix& gamma, PairedAccumulator& acc) mutable {
        decide_feedback(first, gamma, a);
        decide_feedback(second, gamma, b);
        const double ra = accumulate_rate(gamma, a, acc.first);
        const double rb = accumulate_rate(gamma, b, acc.second);
        acc.difference.add(rb - ra);
      });
  const auto acc = detail::merge_blocks(blocks, PairedAccumulator(model.beams));
  return {detail::finish_rate(acc.first, seed), detail::finish_rate(acc.second, seed), acc.difference.mean, acc.difference.std_error()};
}

namespace {

template <class PerTrial, class Acc>
std::vector<Acc> run_conditional_blocks(const ChannelModel& model, const SinrMatrix& others, std::int64_t trials,
                                        std::uint64_t seed, const Acc& init, const PerTrial& per_trial) {
  if (others.users() != model.users - 1 || (others.users() > 0 && others.beams() != model.beams)) {
    throw ShapeError("fixed columns must cover users 2..n with M entries each");
  }
  const SinrSampler sampler(model);
  const auto total = static_cast<std::size_t>(trials);
  std::vector<Acc> blocks(parallel::block_count(total), init);
  parallel::for_each_block(total, [&](std::size_t blk, std::size_t begin, std::size_t end) {
    SinrMatrix gamma(model.beams, model.users);
    for (int i = 1; i < model.users; ++i) {
      const auto src = others.column(i - 1);
      std::copy(src.begin(), src.end(), gamma.column(i).begin());
    }
    Acc acc = init;
    PerTrial fn = per_trial;
    for (std::size_t t = begin; t < end; ++t) {
      // Same substream as ergodic trials, so n = 1 reproduces ergodic_rate.
      sampler.sample(0, t, seed, StreamDomain::Trials, gamma.column(0));
      gamma.set_provenance(model.hash(), t, seed);
      fn(gamma, acc);
    }
    blocks[blk] = std::move(acc);
  });
  return blocks;
}

}  // namespace

RateEstimate conditional_rate_given_others(const PolicySpec& policy, const ChannelModel& model,
                                           const SinrMatrix& others, std::int64_t trials, std::uint64_t seed) {
  check_shapes(policy, model);
  check_trials(trials);
  auto blocks = run_conditional_blocks(
      model, others, trials, seed, RateAccumulator(model.beams),
      [&, masks = std::vector<BeamMask>(static_cast<std::size_t>(model.users))](
          const SinrMatrix& gamma, RateAccumulator& acc) mutable {
        decide_feedback(policy, gamma, masks);
        accumulate_rate(gamma, masks, acc);
      });
  return detail::finish_rate(detail::merge_blocks(blocks, RateAccumulator(model.beams)), seed);
}

PairedRateEstimate paired_conditional_difference(const PolicySpec& first, const PolicySpec& second,
                                                 const ChannelModel& model, const SinrMatrix& others,
                                                 std::int64_t trials, std::uint64_t seed) {
  check_shapes(first, model);
  check_shapes(second, model);
  check_trials(trials);
  const auto n = static_cast<std::size_t>(model.users);
  auto blocks = run_conditional_blocks(
      model, others, trials, seed, PairedAccumulator(model.beams),
      [&, a = std::vector<BeamMask>(n), b = std::vector<BeamMask>(n)](const SinrMatrix& gamma,
                                                                      PairedAccumulator& acc) mutable {
        decide_feedback(first, gamma, a);
        decide_feedback(second, gamma, b);
        const double ra = accumulate_rate(gamma, a, acc.first);
        const double rb = accumulate_rate(gamma, b, acc.second);
        acc.difference.add(rb - ra);
      });
  const auto acc = detail::merge_blocks(blocks, PairedAccumulator(model.beams));
  return {detail::finish_rate(acc.first, seed), detail::finish_rate(acc.second, seed), acc.difference.mean, acc.difference.std_error()};
}

FeedbackLoad feedback_load(const PolicySpec& policy, const ChannelModel& model, std::int64_t samples,
                           std::uint64_t seed) {
  check_shapes(policy, model);
  FeedbackLoad load;
  double variance = 0.0;
  for (const auto& rule : policy.rules) {
    const auto p = beam1_feedback_region_probability(rule, model, samples, seed);
    load.lambda_per_beam += p.value;
    load.analytic = load.analytic && p.exact;
    variance += p.std_error * p.std_error;
  }
  load.std_error = std::sqrt(variance);
  return load;
}

}  // namespace obf

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "obf/fading.hpp"
#include "obf/parallel.hpp"
#include "obf/scheduler.hpp"
#include "obf/stats.hpp"

namespace obf::detail {

/// Per-trial total and per-beam rate statistics.
struct RateAccumulator {
  RunningStats total;
  std::vector<RunningStats> beam;

  explicit RateAccumulator(int beams = 0) : beam(static_cast<std::size_t>(beams)) {}

  void merge(const RateAccumulator& other) {
    total.merge(other.total);
    for (std::size_t m = 0; m < beam.size(); ++m) beam[m].merge(other.beam[m]);
  }
};

/// Adds one trial's per-beam rates to acc and returns the total.
inline double accumulate_rate(const SinrMatrix& gamma, std::span<const BeamMask> masks, RateAccumulator& acc) {
  double total = 0.0;
  for (int m = 0; m < gamma.beams(); ++m) {
    const int w = beam_winner(gamma, masks, m);
    const double r = w < 0 ? 0.0 : std::log1p(gamma.at(m, w));
    acc.beam[static_cast<std::size_t>(m)].add(r);
    total += r;
  }
  acc.total.add(total);
  return total;
}

inline RateEstimate finish_rate(const RateAccumulator& acc, std::uint64_t seed) {
  RateEstimate e;
  e.trials = acc.total.count;
  e.seed = seed;
  for (const auto& b : acc.beam) {
    e.per_beam_means.push_back(b.mean);
    e.mean += b.mean;
  }
  e.std_error = acc.total.std_error();
  e.ci95_lo = e.mean - 1.96 * e.std_error;
  e.ci95_hi = e.mean + 1.96 * e.std_error;
  return e;
}

/// Samples every trial in [0, trials) and folds it into one accumulator per
/// fixed-size block. Callers merge the returned blocks in index order, which
/// keeps results independent of the worker count. per_trial is copied into
/// each block, so it may carry mutable scratch buffers.
template <class Acc, class PerTrial>
std::vector<Acc> run_trial_blocks(const SinrSampler& sampler, std::size_t trials, std::uint64_t seed,
                                  const Acc& init, const PerTrial& per_trial) {
  std::vector<Acc> blocks(parallel::block_count(trials), init);
  parallel::for_each_block(trials, [&](std::size_t b, std::size_t begin, std::size_t end) {
    SinrMatrix gamma(sampler.model().beams, sampler.model().users);
    Acc acc = init;
    PerTrial fn = per_trial;
    for (std::size_t t = begin; t < end; ++t) {
      sampler.sample_matrix(t, seed, gamma);
      fn(t, gamma, acc);
    }
    blocks[b] = std::move(acc);
  });
  return blocks;
}

template <class Acc>
Acc merge_blocks(std::vector<Acc>& blocks, Acc init) {
  for (auto& b : blocks) init.merge(b);
  return init;
}

}  // namespace obf::detail

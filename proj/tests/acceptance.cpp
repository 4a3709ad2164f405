// Desk-scale acceptance suite. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Pass criterion numbers as arguments to
// run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "obf/optimizer.hpp"
#include "obf/parallel.hpp"
#include "obf/policy.hpp"
#include "obf/rng.hpp"
#include "obf/scheduler.hpp"
#include "obf/threshold.hpp"

using namespace obf;

namespace {

constexpr double kSlackSe = 3.0;
constexpr std::int64_t kTrials = 100'000;
constexpr std::int64_t kMatchSamples = 1'000'000;
constexpr std::uint64_t kSeed = 20240601;

ChannelModel rayleigh(int beams, int users, double snr = 1.0) {
  ChannelModel m;
  m.beams = beams;
  m.users = users;
  m.snr = snr;
  return m;
}

VerifyOptions verify_options() {
  VerifyOptions o;
  o.match_samples = kMatchSamples;
  o.slack_se = kSlackSe;
  return o;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Serialized reports from a criterion, compared byte for byte across worker counts.
using Transcript = std::vector<std::string>;

PolicySpec random_policy(MatchKind kind, int users, int beams, std::uint64_t seed) {
  const std::string label = "p" + std::to_string(seed);
  return kind == MatchKind::Gtfp ? random_box_union_policy(users, beams, seed, label)
                                 : random_max_sinr_box_union_policy(users, seed, label);
}

Outcome theorem1_suite(MatchKind kind, int count, Transcript* out = nullptr) {
  const auto model = rayleigh(2, 10);
  const auto opts = verify_options();
  int passed = 0;
  int loads_ok = 0;
  double worst_z = INFINITY;
  for (int i = 0; i < count; ++i) {
    const auto policy = random_policy(kind, 10, 2, 100 + i);
    const auto r = verify_theorem1(policy, model, kind, kTrials, kSeed + i, opts);
    passed += r.pass;
    loads_ok += r.load_tolerance_achieved <= load_tolerance(10);
    if (r.std_error > 0) worst_z = std::min(worst_z, r.mean_difference / r.std_error);
    if (out) out->push_back(to_json(r).dump());
    if (!r.pass) {
      std::printf("    %s: diff %.3g se %.3g load %.3g disagreements %lld\n", policy.label.c_str(),
                  r.mean_difference, r.std_error, r.load_tolerance_achieved,
                  static_cast<long long>(r.classifier_disagreements));
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d/%d pass, loads matched %d/%d, min diff/SE %.2f", passed, count, loads_ok,
                count, worst_z);
  return {passed == count && loads_ok == count, buf};
}

Outcome chain_suite(MatchKind kind, int count, Transcript* out = nullptr) {
  const auto model = rayleigh(2, 5);
  const auto opts = verify_options();
  int passed = 0;
  for (int i = 0; i < count; ++i) {
    const auto policy = random_policy(kind, 5, 2, 200 + i);
    const auto r = verify_monotone_chain(policy, model, kind, kTrials, kSeed + 50 + i, opts);
    passed += r.pass;
    if (out) out->push_back(to_json(r).dump());
    if (!r.pass) {
      std::printf("    %s: loads_agree %d\n", policy.label.c_str(), static_cast<int>(r.loads_agree));
      for (const auto& s : r.steps) {
        std::printf("      step %d diff %.3g se %.3g\n", s.k, s.mean_difference, s.std_error);
      }
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d/%d chains nondecreasing with constant load", passed, count);
  return {passed == count, buf};
}

Outcome criterion1() { return theorem1_suite(MatchKind::Gtfp, 20); }

Outcome criterion2() { return chain_suite(MatchKind::Gtfp, 5); }

Outcome criterion3() {
  const auto t = theorem1_suite(MatchKind::Mtfp, 20);
  const auto c = chain_suite(MatchKind::Mtfp, 5);
  return {t.pass && c.pass, t.detail + "; " + c.detail};
}

Outcome criterion4(Transcript* out = nullptr, int pairs = 10) {
  constexpr std::int64_t kTotal = 100'000;
  const std::int64_t per_pair = kTotal / 10;
  std::int64_t agreements = 0;
  std::int64_t total = 0;
  int balances = 0;
  int balanced = 0;
  for (int i = 0; i < pairs; ++i) {
    // Alternate general and maximum-SINR pairs, with two and three beams.
    const auto kind = i % 2 == 0 ? MatchKind::Gtfp : MatchKind::Mtfp;
    const int beams = i < 5 ? 2 : 3;
    const auto model = rayleigh(beams, 4);
    const auto policy = random_policy(kind, 4, beams, 300 + i);
    const auto pair = match_policy(policy, model, kind, kMatchSamples, kSeed + 300 + i);
    const auto a = audit_events(pair, model, per_pair, kSeed + 400 + i, kSlackSe);
    if (out) out->push_back(to_json(a).dump());
    agreements += a.agreements;
    total += a.agreements + a.disagreements;
    for (const auto& m : a.mass_balance) {
      ++balances;
      balanced += m.pass;
      if (!m.pass) {
        std::printf("    pair %d user %d: gain %.5g loss %.5g se %.3g\n", i, m.user, m.gain_mass, m.loss_mass,
                    m.std_error);
      }
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "classifier agreement %lld/%lld, mass balance %d/%d users",
                static_cast<long long>(agreements), static_cast<long long>(total), balanced, balances);
  return {agreements == total && total == per_pair * pairs && balanced == balances, buf};
}

Outcome criterion5() {
  constexpr std::int64_t kVectors = 1'000'000;
  std::int64_t mismatches = 0;
  for (int beams : {2, 3}) {
    const auto model = rayleigh(beams, 1);
    const SinrSampler sampler(model);
    const auto g = FeedbackRule::general_threshold(0, 1.5);
    const auto m = FeedbackRule::max_sinr_threshold(0, 1.5);
    std::vector<double> v(static_cast<std::size_t>(beams));
    for (std::int64_t t = 0; t < kVectors; ++t) {
      sampler.sample(0, static_cast<std::uint64_t>(t), kSeed + static_cast<std::uint64_t>(beams),
                     StreamDomain::Probes, v);
      mismatches += g.requests(v) != m.requests(v);
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 2 x 10^6 vectors"};
}

// E[log(1 + X)] for X ~ Exp(1), by double-exponential quadrature.
double exponential_log_rate() {
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate([](double x) { return std::log1p(x) * std::exp(-x); });
}

Outcome criterion6(Transcript* out = nullptr) {
  const auto policy = PolicySpec::homogeneous(1, always_feedback_rule(0), "always");
  const auto e = ergodic_rate(policy, rayleigh(1, 1), 1'000'000, kSeed + 6);
  if (out) out->push_back(to_json(e).dump());
  const double oracle = exponential_log_rate();
  char buf[128];
  std::snprintf(buf, sizeof buf, "rate %.6f vs oracle %.6f, |diff| %.2g, 3SE %.2g", e.mean, oracle,
                std::abs(e.mean - oracle), kSlackSe * e.std_error);
  return {std::abs(e.mean - oracle) <= kSlackSe * e.std_error, buf};
}

Outcome criterion7() {
  constexpr std::int64_t kSamples = 1'000'000;
  double worst_cdf = 0.0;
  double worst_round_trip = 0.0;
  for (const auto& model : {rayleigh(2, 1), rayleigh(3, 1, 2.0)}) {
    const SinrSampler sampler(model);
    std::vector<double> draws(static_cast<std::size_t>(kSamples));
    std::vector<double> v(static_cast<std::size_t>(model.beams));
    for (std::int64_t t = 0; t < kSamples; ++t) {
      sampler.sample(0, static_cast<std::uint64_t>(t), kSeed + 7, StreamDomain::Probes, v);
      draws[static_cast<std::size_t>(t)] = v[0];
    }
    std::sort(draws.begin(), draws.end());
    for (int k = 1; k <= 20; ++k) {
      // Points spread over the bulk and the upper tail.
      const double x = 0.1 * k * k / 4.0;
      const auto below = std::upper_bound(draws.begin(), draws.end(), x) - draws.begin();
      const double empirical = static_cast<double>(below) / static_cast<double>(kSamples);
      worst_cdf = std::max(worst_cdf, std::abs(empirical - marginal_cdf(model, x)));
    }
    for (int k = 1; k < 100; ++k) {
      const double q = k / 100.0;
      const double tau = upper_quantile(model, q, SinrStatistic::Beam1);
      worst_round_trip = std::max(worst_round_trip, std::abs(marginal_survival(model, tau) - q));
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "max CDF gap %.2e (limit 3e-3), max quantile round trip %.2e (limit 1e-4)",
                worst_cdf, worst_round_trip);
  return {worst_cdf <= 3e-3 && worst_round_trip < 1e-4, buf};
}

Outcome criterion8(Transcript* out = nullptr) {
  constexpr double kLambda = 0.5;
  constexpr double kStep = 0.02;
  auto model = rayleigh(2, 2);
  model.snr_multipliers = {1.0, 4.0};

  const auto grid = simplex_grid(model, 2, kLambda, MatchKind::Gtfp, kStep, kTrials, kSeed + 8);
  // Rate change across one grid step around the grid optimum.
  double step_slack = 0.0;
  for (const auto& t : grid.surface) {
    const double d0 = std::abs(t.point.probs[0] - grid.best.probs[0]);
    const double d1 = std::abs(t.point.probs[1] - grid.best.probs[1]);
    if (std::max(d0, d1) <= kStep + 1e-9) step_slack = std::max(step_slack, std::abs(t.rate.mean - grid.rate.mean));
  }
  const auto init = thresholds_from_probabilities(model, MatchKind::Gtfp, {kLambda / 2, kLambda / 2});
  const auto ascent = coordinate_ascent(model, 2, kLambda, MatchKind::Gtfp, kTrials, kSeed + 8, init);
  if (out) out->push_back(to_json(ascent).dump());
  const bool hetero = ascent.rate.mean >= grid.rate.mean - kSlackSe * grid.rate.std_error - step_slack;

  const auto symmetric = rayleigh(2, 2);
  const auto homogeneous = homogeneous_search(symmetric, 2, kLambda, MatchKind::Gtfp, kTrials, kSeed + 9);
  RateEstimate best;
  for (int k = 0; k * kStep <= kLambda / 2 + 1e-9; ++k) {
    const auto point = thresholds_from_probabilities(symmetric, MatchKind::Gtfp, {k * kStep, k * kStep});
    const auto e = ergodic_rate(threshold_policy(point, MatchKind::Gtfp), symmetric, kTrials, kSeed + 9);
    if (e.mean > best.mean) best = e;
  }
  const bool homo = homogeneous.rate.mean >= best.mean - kSlackSe * best.std_error;

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "ascent %.5f at (%.3f, %.3f) vs grid %.5f at (%.2f, %.2f), se %.1e, step %.1e; "
                "homogeneous %.5f vs symmetric grid %.5f",
                ascent.rate.mean, ascent.best.probs[0], ascent.best.probs[1], grid.rate.mean, grid.best.probs[0],
                grid.best.probs[1], grid.rate.std_error, step_slack, homogeneous.rate.mean, best.mean);
  return {hetero && homo, buf};
}

// Reruns a representative slice of every stochastic criterion at two worker counts.
Outcome criterion9() {
  auto transcript = [] {
    Transcript t;
    theorem1_suite(MatchKind::Gtfp, 2, &t);
    theorem1_suite(MatchKind::Mtfp, 2, &t);
    chain_suite(MatchKind::Gtfp, 1, &t);
    chain_suite(MatchKind::Mtfp, 1, &t);
    criterion4(&t, 2);
    criterion6(&t);
    criterion8(&t);
    return t;
  };
  parallel::set_worker_count(1);
  const auto one = transcript();
  parallel::set_worker_count(8);
  const auto eight = transcript();
  parallel::set_worker_count(1);
  std::size_t bytes = 0;
  for (const auto& s : one) bytes += s.size();
  return {one == eight, std::to_string(one.size()) + " reports, " + std::to_string(bytes) +
                            " bytes compared at 1 and 8 workers"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"general-threshold switch never loses rate", criterion1}},
      {2, {"general-threshold monotone chain", criterion2}},
      {3, {"maximum-SINR switch and chain", criterion3}},
      {4, {"event classifiers and mass balance", [] { return criterion4(); }}},
      {5, {"threshold families coincide above 1", criterion5}},
      {6, {"single-user rate against quadrature", [] { return criterion6(); }}},
      {7, {"marginal CDF and quantile inversion", criterion7}},
      {8, {"optimizer against grid search", [] { return criterion8(); }}},
      {9, {"worker-count invariance", criterion9}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  parallel::set_worker_count(1);
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    const auto outcome = entry.second();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !outcome.pass;
    std::printf("criterion %d %s: %s (%s) [%.0f s]\n", id, outcome.pass ? "PASS" : "FAIL", entry.first,
                outcome.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

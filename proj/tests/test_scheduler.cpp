#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "obf/error.hpp"
#include "obf/parallel.hpp"
#include "obf/scheduler.hpp"

using namespace obf;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ChannelModel rayleigh(int beams, int users) {
  ChannelModel m;
  m.beams = beams;
  m.users = users;
  return m;
}

// Composite Simpson on [0, 60] of log(1 + x) e^{-x}; the tail beyond 60 is below 1e-24.
double single_user_rate_oracle() {
  const int n = 600'000;
  const double h = 60.0 / n;
  double s = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double x = k * h;
    const double f = std::log1p(x) * std::exp(-x);
    s += (k == 0 || k == n) ? f : (k % 2 ? 4.0 * f : 2.0 * f);
  }
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("quadrature oracle reproduces e E1(1)") {
  CHECK(single_user_rate_oracle() == doctest::Approx(0.596347362323194).epsilon(1e-10));
}

TEST_CASE("instantaneous rate examples") {
  const auto g1 = SinrMatrix::from_columns({{2.0}});
  const auto always = PolicySpec::homogeneous(1, always_feedback_rule(0), "always");
  CHECK(instantaneous_rate(always, g1).total == doctest::Approx(std::log(3.0)));

  const auto g3 = SinrMatrix::from_columns({{0.5}, {0.9}, {0.8}});
  PolicySpec p{{always_feedback_rule(0), never_feedback_rule(1), always_feedback_rule(2)}, "mixed"};
  const auto r = instantaneous_rate(p, g3);
  CHECK(r.assignment.winner[0] == 2);
  CHECK(r.assignment.contenders[0] == std::vector<int>{0, 2});
  CHECK(r.total == doctest::Approx(std::log(1.8)));

  const auto g2 = SinrMatrix::from_columns({{0.2, 3.0}, {0.1, 0.4}});
  const auto t = PolicySpec::homogeneous(2, FeedbackRule::general_threshold(0, 1.0), "g");
  const auto r2 = instantaneous_rate(t, g2);
  CHECK(r2.per_beam[0] == 0.0);
  CHECK(r2.assignment.winner[0] == -1);
  CHECK(r2.per_beam[1] == doctest::Approx(std::log(4.0)));
  CHECK(r2.total == r2.per_beam[0] + r2.per_beam[1]);

  CHECK_THROWS_AS(instantaneous_rate(t, g1), ShapeError);
}

TEST_CASE("winner ties go to the lowest user index") {
  const auto g = SinrMatrix::from_columns({{0.7}, {0.7}});
  const auto p = PolicySpec::homogeneous(2, always_feedback_rule(0), "a");
  CHECK(instantaneous_rate(p, g).assignment.winner[0] == 0);
}

TEST_CASE("single-user ergodic rate matches the quadrature oracle") {
  const auto p = PolicySpec::homogeneous(1, always_feedback_rule(0), "always");
  const auto e = ergodic_rate(p, rayleigh(1, 1), 200'000, 31);
  CHECK(std::abs(e.mean - single_user_rate_oracle()) < 3.0 * e.std_error);
  CHECK(e.ci95_lo == doctest::Approx(e.mean - 1.96 * e.std_error));
  CHECK(e.trials == 200'000);
  CHECK(e.in(RateUnit::Bits).mean == doctest::Approx(e.mean / std::numbers::ln2));
}

TEST_CASE("never feeding back gives zero rate exactly") {
  const auto p = PolicySpec::homogeneous(4, never_feedback_rule(0), "never");
  const auto e = ergodic_rate(p, rayleigh(3, 4), 1000, 1);
  CHECK(e.mean == 0.0);
  CHECK(e.std_error == 0.0);
}

TEST_CASE("symmetric policy splits rate evenly across beams") {
  const auto p = random_box_union_policy(6, 2, 3, "r");
  const auto e = ergodic_rate(p, rayleigh(2, 6), 100'000, 2);
  double sum = 0.0;
  for (double b : e.per_beam_means) sum += b;
  CHECK(sum == doctest::Approx(e.mean).epsilon(1e-12));
  // Each per-beam SE is bounded by the total SE here; use it as a conservative scale.
  CHECK(std::abs(e.per_beam_means[0] - e.per_beam_means[1]) < 3.0 * std::sqrt(2.0) * e.std_error);
}

TEST_CASE("ergodic rate does not depend on the worker count") {
  const auto p = random_box_union_policy(5, 3, 9, "r");
  const auto model = rayleigh(3, 5);
  parallel::set_worker_count(1);
  const auto a = ergodic_rate(p, model, 30'000, 4);
  parallel::set_worker_count(8);
  const auto b = ergodic_rate(p, model, 30'000, 4);
  parallel::set_worker_count(0);
  CHECK(a.mean == b.mean);
  CHECK(a.std_error == b.std_error);
  CHECK(a.per_beam_means == b.per_beam_means);
}

TEST_CASE("paired difference uses common random numbers") {
  const auto model = rayleigh(2, 4);
  const auto p = PolicySpec::homogeneous(4, FeedbackRule::general_threshold(0, 0.5), "g");
  const auto same = paired_rate_difference(p, p, model, 5000, 8);
  CHECK(same.mean_difference == 0.0);
  CHECK(same.std_error == 0.0);
  const auto m = PolicySpec::homogeneous(4, FeedbackRule::max_sinr_threshold(0, 0.5), "m");
  const auto d = paired_rate_difference(m, p, model, 50'000, 8);
  CHECK(d.mean_difference >= -3.0 * d.std_error);
  CHECK(d.first.mean == ergodic_rate(m, model, 50'000, 8).mean);
}

TEST_CASE("conditional rate") {
  const auto p1 = PolicySpec::homogeneous(1, always_feedback_rule(0), "always");
  const SinrMatrix none(1, 0);
  const auto c = conditional_rate_given_others(p1, rayleigh(1, 1), none, 5000, 17);
  const auto e = ergodic_rate(p1, rayleigh(1, 1), 5000, 17);
  CHECK(c.mean == e.mean);

  // The other user's beam-1 SINR is 5 and user 1 is silent: the rate is fixed.
  PolicySpec p{{never_feedback_rule(0), always_feedback_rule(1)}, "fixed"};
  const auto others = SinrMatrix::from_columns({{5.0}});
  const auto r = conditional_rate_given_others(p, rayleigh(1, 2), others, 1000, 3);
  CHECK(r.mean == doctest::Approx(std::log(6.0)).epsilon(1e-14));
  CHECK(r.std_error == doctest::Approx(0.0));

  CHECK_THROWS_AS(conditional_rate_given_others(p, rayleigh(1, 3), others, 1000, 3), ShapeError);
}

TEST_CASE("feedback load") {
  const auto model = rayleigh(2, 5);
  const double tau = upper_quantile(model, 0.1, SinrStatistic::Beam1);
  const auto h = PolicySpec::homogeneous(5, FeedbackRule::general_threshold(0, tau), "g");
  const auto l = feedback_load(h, model, 1000, 1);
  CHECK(l.analytic);
  CHECK(l.lambda_per_beam == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(feedback_load(PolicySpec::homogeneous(5, never_feedback_rule(0), "n"), model, 1000, 1).lambda_per_beam == 0.0);

  // Users 1-2 at p = 0.1, user 3 a box term measured separately.
  const auto m3 = rayleigh(2, 3);
  const double t3 = upper_quantile(m3, 0.1, SinrStatistic::Beam1);
  const auto box = FeedbackRule::box_union(2, BoxUnionRegion{{Box{{{0.4, kInf}, {0.0, kInf}}}}});
  PolicySpec mixed{{FeedbackRule::general_threshold(0, t3), FeedbackRule::general_threshold(1, t3), box}, "mixed"};
  const auto lm = feedback_load(mixed, m3, 100'000, 6);
  const auto pb = beam1_feedback_region_probability(box, m3, 100'000, 6);
  CHECK_FALSE(lm.analytic);
  CHECK(lm.lambda_per_beam == doctest::Approx(0.2 + pb.value).epsilon(1e-9));
  CHECK(lm.std_error == doctest::Approx(pb.std_error));
  CHECK(std::abs(pb.value - marginal_survival(m3, 0.4)) < 3.0 * pb.std_error);
}

TEST_CASE("removing a non-contending user does not change any rate") {
  const auto p3 = PolicySpec::homogeneous(3, FeedbackRule::general_threshold(0, 0.6), "g");
  const auto p2 = PolicySpec::homogeneous(2, FeedbackRule::general_threshold(0, 0.6), "g");
  const auto g3 = SinrMatrix::from_columns({{0.9, 0.1}, {0.2, 0.3}, {0.1, 0.7}});
  const auto g2 = SinrMatrix::from_columns({{0.9, 0.1}, {0.1, 0.7}});
  CHECK(instantaneous_rate(p3, g3).per_beam == instantaneous_rate(p2, g2).per_beam);
}

TEST_CASE("rate estimation rejects too few trials") {
  const auto p = PolicySpec::homogeneous(1, always_feedback_rule(0), "a");
  CHECK_THROWS_AS(ergodic_rate(p, rayleigh(1, 1), 99, 1), ConfigError);
}

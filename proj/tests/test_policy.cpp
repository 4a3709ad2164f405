#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "obf/error.hpp"
#include "obf/fading.hpp"
#include "obf/policy.hpp"

using namespace obf;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ChannelModel rayleigh(int beams, int users = 1) {
  ChannelModel m;
  m.beams = beams;
  m.users = users;
  return m;
}

FeedbackRule box_rule(int user, std::vector<Interval> sides) {
  return FeedbackRule::box_union(user, BoxUnionRegion{{Box{std::move(sides)}}});
}

}  // namespace

TEST_CASE("threshold rule decisions") {
  const std::vector<double> v{0.7, 0.3};
  const auto g5 = evaluate_rule(FeedbackRule::general_threshold(0, 0.5), v);
  CHECK(g5.requested() == std::vector<int>{0});
  CHECK(g5.reports == std::vector<ReportedSinr>{{0, 0.7}});
  CHECK(evaluate_rule(FeedbackRule::general_threshold(0, 0.2), v).requested() == std::vector<int>{0, 1});

  const std::vector<double> w{0.7, 0.9};
  const auto m5 = evaluate_rule(FeedbackRule::max_sinr_threshold(0, 0.5), w);
  CHECK(m5.requested() == std::vector<int>{1});
  CHECK(m5.reports == std::vector<ReportedSinr>{{1, 0.9}});
  CHECK(evaluate_rule(FeedbackRule::max_sinr_threshold(0, 1.0), w).is_empty());
}

TEST_CASE("threshold boundary is inclusive") {
  const std::vector<double> v{1.5, 0.2};
  CHECK(FeedbackRule::general_threshold(0, 1.5).selects_beam(v, 0));
  CHECK(FeedbackRule::max_sinr_threshold(0, 1.5).selects_beam(v, 0));
}

TEST_CASE("evaluate_rule validates its input") {
  const auto rule = box_rule(0, {{1.0, kInf}, {0.0, kInf}});
  const std::vector<double> three{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(evaluate_rule(rule, three), ShapeError);
  const std::vector<double> bad{-1.0, 0.5};
  CHECK_THROWS_AS(evaluate_rule(FeedbackRule::general_threshold(0, 1.0), bad), DomainError);
  CHECK_THROWS_AS(FeedbackRule::general_threshold(0, -0.1), ConfigError);
}

TEST_CASE("box union uses own beam plus the others sorted") {
  // Beam k is requested when v_k >= 1 and the largest other entry is below 0.5.
  const auto rule = box_rule(0, {{1.0, kInf}, {0.0, 0.5}, {0.0, kInf}});
  const std::vector<double> v{1.2, 0.1, 0.4};
  CHECK(rule.requests(v) == 0b001);
  const std::vector<double> w{0.1, 0.4, 1.2};
  CHECK(rule.requests(w) == 0b100);
  const std::vector<double> u{1.2, 0.6, 0.1};
  CHECK(rule.requests(u) == 0);
}

TEST_CASE("beam symmetry of built-in kinds") {
  for (int beams : {2, 3, 4}) {
    const auto probes = symmetry_probes(rayleigh(beams), 0, 1000, 77);
    Substream rng(5, StreamDomain::PolicyDraw, 0, static_cast<std::uint64_t>(beams));
    const std::vector<FeedbackRule> rules{
        FeedbackRule::general_threshold(0, 0.4), FeedbackRule::max_sinr_threshold(0, 0.6),
        random_box_union_rule(0, beams, rng), random_max_sinr_box_union_rule(0, rng),
        FeedbackRule::symmetric_predicate(0, [](SinrVector c) { return c[0] > 0.3 && c[1] < 0.4; })};
    for (const auto& r : rules) {
      const auto report = check_beam_symmetry(r, probes);
      CHECK_MESSAGE(report.symmetric, r.name());
      CHECK(report.checks > 0);
    }
  }
}

TEST_CASE("asymmetric predicate is reported") {
  const auto rule = FeedbackRule::predicate(0, [](SinrVector v) -> BeamMask { return v[1] > 2.0 ? 1 : 0; });
  std::vector<std::vector<double>> probes{{0.1, 3.0}, {0.5, 0.2}};
  const auto report = check_beam_symmetry(rule, probes);
  CHECK_FALSE(report.symmetric);
  REQUIRE(report.violation.has_value());
  CHECK(report.violation->probe == 0);
}

TEST_CASE("argmax tie is a documented deviation, not a violation") {
  const auto rule = FeedbackRule::max_sinr_threshold(0, 0.1);
  const auto report = check_beam_symmetry(rule, {{0.5, 0.5}});
  CHECK(report.symmetric);
  CHECK(report.tie_deviations > 0);
}

TEST_CASE("GTFP and MTFP agree above one and GTFP dominates") {
  const auto model = rayleigh(3);
  const auto probes = symmetry_probes(model, 0, 20'000, 8);
  const auto g15 = FeedbackRule::general_threshold(0, 1.5);
  const auto m15 = FeedbackRule::max_sinr_threshold(0, 1.5);
  const auto g3 = FeedbackRule::general_threshold(0, 0.3);
  const auto m3 = FeedbackRule::max_sinr_threshold(0, 0.3);
  for (const auto& v : probes) {
    REQUIRE(g15.requests(v) == m15.requests(v));
    REQUIRE((m3.requests(v) & ~g3.requests(v)) == 0);
  }
}

TEST_CASE("feedback region probabilities") {
  const auto m2 = rayleigh(2);
  const double tau = upper_quantile(m2, 0.3, SinrStatistic::Beam1);
  const auto g = beam1_feedback_region_probability(FeedbackRule::general_threshold(0, tau), m2, 1000, 1);
  CHECK(g.exact);
  CHECK(g.value == doctest::Approx(0.3).epsilon(1e-6));

  const double tau_max = upper_quantile(m2, 0.4, SinrStatistic::MaxOverBeams);
  const auto mt = beam1_feedback_region_probability(FeedbackRule::max_sinr_threshold(0, tau_max), m2, 1000, 1);
  CHECK(mt.value == doctest::Approx(0.2).epsilon(1e-3));

  // Same threshold as a max-SINR box union, estimated by Monte Carlo.
  const auto mb = beam1_feedback_region_probability(
      FeedbackRule::max_sinr_box_union(0, IntervalUnion{{{tau_max, kInf}}}), m2, 200'000, 3);
  CHECK_FALSE(mb.exact);
  CHECK(std::abs(mb.value - 0.2) < 2.0 * mb.std_error + 2e-3);

  const auto box = beam1_feedback_region_probability(box_rule(0, {{2.0, kInf}}), rayleigh(1), 200'000, 4);
  CHECK(std::abs(box.value - std::exp(-2.0)) < 2.0 * box.std_error);

  CHECK_THROWS_AS(beam1_feedback_region_probability(box_rule(0, {{2.0, kInf}}), rayleigh(1), 999, 4), ConfigError);
}

TEST_CASE("feedback region estimate is deterministic in the seed") {
  const auto rule = box_rule(0, {{0.5, 2.0}, {0.0, 0.3}});
  const auto a = beam1_feedback_region_probability(rule, rayleigh(2), 50'000, 12);
  const auto b = beam1_feedback_region_probability(rule, rayleigh(2), 50'000, 12);
  CHECK(a.value == b.value);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("policy spec invariants") {
  auto p = PolicySpec::homogeneous(3, FeedbackRule::general_threshold(0, 1.0), "h");
  CHECK(p.users() == 3);
  CHECK(p.is_homogeneous());
  CHECK_NOTHROW(p.validate());
  CHECK(p.rules[2].user_index() == 2);
  p = p.with_rule(1, FeedbackRule::general_threshold(1, 2.0));
  CHECK_FALSE(p.is_homogeneous());
  p.rules[2] = FeedbackRule::general_threshold(0, 1.0);
  CHECK_THROWS_AS(p.validate(), ContractError);

  CHECK(never_feedback_rule(0).requests(std::vector<double>{1e9, 1e9}) == 0);
  CHECK(always_feedback_rule(0).requests(std::vector<double>{0.0, 1e-9}) == 0b11);
}

TEST_CASE("random policies are reproducible and well formed") {
  const auto a = random_box_union_policy(10, 2, 42, "a");
  const auto b = random_box_union_policy(10, 2, 42, "a");
  REQUIRE(a.users() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(a.rules[static_cast<std::size_t>(i)].same_rule(b.rules[static_cast<std::size_t>(i)]));
    CHECK(a.rules[static_cast<std::size_t>(i)].user_index() == i);
  }
  const auto m = random_max_sinr_box_union_policy(5, 42);
  CHECK(m.all_max_sinr_kind());
  CHECK_FALSE(a.all_max_sinr_kind());
}

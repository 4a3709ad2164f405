#include "obf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "obf/error.hpp"
#include "obf/rng.hpp"

namespace obf {

namespace {

constexpr double kFeasibilitySlack = 1e-9;

void prepare(ChannelModel& model, int users, double lambda, std::int64_t trials) {
  if (users < 1) throw ConfigError("optimization needs at least one user");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("infeasible feedback budget");
  if (trials < 100) throw ConfigError("rate estimation needs at least 100 trials");
  model.users = users;
  model.validate();
}

// CRN rate oracle: every call reuses the same seeded trials.
class RateOracle {
 public:
  RateOracle(const ChannelModel& model, MatchKind kind, std::int64_t trials, std::uint64_t seed)
      : model_(model), kind_(kind), trials_(trials), seed_(seed) {}

  TracePoint evaluate(const std::vector<double>& probs) {
    ++calls_;
    TracePoint tp;
    tp.point = thresholds_from_probabilities(model_, kind_, probs);
    tp.rate = ergodic_rate(threshold_policy(tp.point, kind_), model_, trials_, seed_);
    return tp;
  }

  std::int64_t calls() const { return calls_; }

 private:
  const ChannelModel& model_;
  MatchKind kind_;
  std::int64_t trials_;
  std::uint64_t seed_;
  std::int64_t calls_ = 0;
};

// Maximizes f over [lo, hi]: coarse scan, then golden section around the best
// scan point. Returns the best evaluated point.
template <class F>
TracePoint line_search(double lo, double hi, bool include_lo, const OptimizerOptions& options, F&& f) {
  const int points = std::max(options.coarse_points, 3);
  std::vector<double> xs;
  std::vector<TracePoint> vals;
  for (int j = include_lo ? 0 : 1; j < points; ++j) {
    xs.push_back(lo + (hi - lo) * j / (points - 1));
  }
  TracePoint best;
  double best_x = hi;
  bool have = false;
  for (double x : xs) {
    auto tp = f(x);
    if (!have || tp.rate.mean > best.rate.mean) {
      best = std::move(tp);
      best_x = x;
      have = true;
    }
  }
  if (hi - lo <= options.tolerance) return best;

  const double step = (hi - lo) / (points - 1);
  double a = std::max(lo, best_x - step);
  double b = std::min(hi, best_x + step);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  auto fc = f(c);
  auto fd = f(d);
  while (b - a > options.tolerance) {
    if (fc.rate.mean >= fd.rate.mean) {
      b = d;
      d = c;
      fd = std::move(fc);
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = std::move(fd);
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  for (auto* tp : {&fc, &fd}) {
    if (tp->rate.mean > best.rate.mean) best = *tp;
  }
  return best;
}

void check_feasible(const std::vector<double>& p, int users, double lambda, double pmax) {
  if (static_cast<int>(p.size()) != users) throw ShapeError("probability vector length must equal n");
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || x > pmax + kFeasibilitySlack) throw DomainError("probability outside the feasible range");
    sum += x;
  }
  if (sum > lambda + kFeasibilitySlack) throw DomainError("initial point exceeds the feedback budget");
}

}  // namespace

double ThresholdVector::load() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

std::string to_string(OptimizationMethod method) {
  switch (method) {
    case OptimizationMethod::Homogeneous: return "homogeneous";
    case OptimizationMethod::CoordinateAscent: return "coordinate-ascent";
    case OptimizationMethod::SimplexGrid: return "simplex-grid";
  }
  return "homogeneous";
}

double max_probability(const ChannelModel& model, MatchKind kind) {
  return kind == MatchKind::Gtfp ? 1.0 : 1.0 / model.beams;
}

ThresholdVector thresholds_from_probabilities(const ChannelModel& model, MatchKind kind,
                                              const std::vector<double>& probs) {
  if (static_cast<int>(probs.size()) != model.users) throw ShapeError("probability vector length must equal n");
  const double pmax = max_probability(model, kind);
  ThresholdVector out;
  out.probs = probs;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 0.0, pmax);
    if (probs[i] < -kFeasibilitySlack || probs[i] > pmax + kFeasibilitySlack) {
      throw DomainError("feedback probability outside [0, " + std::to_string(pmax) + "]");
    }
    out.probs[i] = p;
    const int user = static_cast<int>(i);
    out.taus.push_back(kind == MatchKind::Gtfp
                           ? upper_quantile(model, p, SinrStatistic::Beam1, user)
                           : upper_quantile(model, std::min(1.0, p * model.beams), SinrStatistic::MaxOverBeams, user));
  }
  return out;
}

PolicySpec threshold_policy(const ThresholdVector& point, MatchKind kind) {
  PolicySpec policy;
  policy.label = kind == MatchKind::Gtfp ? "gtfp" : "mtfp";
  for (std::size_t i = 0; i < point.taus.size(); ++i) {
    const int user = static_cast<int>(i);
    policy.rules.push_back(kind == MatchKind::Gtfp ? FeedbackRule::general_threshold(user, point.taus[i])
                                                   : FeedbackRule::max_sinr_threshold(user, point.taus[i]));
  }
  return policy;
}

OptimizationResult homogeneous_search(ChannelModel model, int users, double lambda, MatchKind kind,
                                      std::int64_t trials, std::uint64_t seed, const OptimizerOptions& options) {
  prepare(model, users, lambda, trials);
  if (lambda <= 0.0) throw DomainError("infeasible feedback budget");
  RateOracle oracle(model, kind, trials, seed);
  const double hi = std::min(max_probability(model, kind), lambda / users);

  OptimizationResult result;
  result.method = OptimizationMethod::Homogeneous;
  int iteration = 0;
  auto f = [&](double p) {
    auto tp = oracle.evaluate(std::vector<double>(static_cast<std::size_t>(users), p));
    tp.iteration = iteration++;
    result.trace.push_back(tp);
    return tp;
  };
  auto best = line_search(0.0, hi, false, options, f);
  result.best = best.point;
  result.rate = best.rate;
  result.iterations = iteration;
  result.oracle_calls = oracle.calls();
  return result;
}

OptimizationResult coordinate_ascent(ChannelModel model, int users, double lambda, MatchKind kind,
                                     std::int64_t trials, std::uint64_t seed, const ThresholdVector& init,
                                     const OptimizerOptions& options) {
  prepare(model, users, lambda, trials);
  const double pmax = max_probability(model, kind);
  check_feasible(init.probs, users, lambda, pmax);
  RateOracle oracle(model, kind, trials, seed);
  const auto n = static_cast<std::size_t>(users);

  std::vector<std::vector<double>> starts{init.probs};
  for (int s = 0; s < options.random_starts; ++s) {
    Substream rng(seed, StreamDomain::Search, static_cast<std::uint64_t>(s), 0);
    std::vector<double> p(n);
    for (double& x : p) x = pmax * rng.uniform();
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    if (sum > lambda) {
      for (double& x : p) x *= lambda / sum;
    }
    starts.push_back(std::move(p));
  }

  OptimizationResult result;
  result.method = OptimizationMethod::CoordinateAscent;
  bool have_best = false;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    int iteration = 0;
    TracePoint current = oracle.evaluate(starts[s]);
    current.start = static_cast<int>(s);
    current.iteration = iteration++;
    result.trace.push_back(current);

    for (int cycle = 0; cycle < options.max_cycles; ++cycle) {
      ++result.iterations;
      const double cycle_start = current.rate.mean;
      for (std::size_t i = 0; i < n; ++i) {
        const double others = std::accumulate(current.point.probs.begin(), current.point.probs.end(), 0.0) -
                              current.point.probs[i];
        const double hi = std::max(0.0, std::min(pmax, lambda - others));
        auto probe = current.point.probs;
        auto f = [&](double x) {
          probe[i] = x;
          return oracle.evaluate(probe);
        };
        auto candidate = line_search(0.0, hi, true, options, f);
        if (candidate.rate.mean > current.rate.mean) {
          candidate.start = static_cast<int>(s);
          candidate.iteration = iteration++;
          current = std::move(candidate);
          result.trace.push_back(current);
        }
      }
      if (current.rate.mean - cycle_start < current.rate.std_error) break;
    }
    if (!have_best || current.rate.mean > result.rate.mean) {
      result.best = current.point;
      result.rate = current.rate;
      have_best = true;
    }
  }
  result.oracle_calls = oracle.calls();
  return result;
}

OptimizationResult simplex_grid(ChannelModel model, int users, double lambda, MatchKind kind, double resolution,
                                std::int64_t trials, std::uint64_t seed) {
  if (users > 3) throw ConfigError("simplex grid is limited to n <= 3 users");
  if (!(resolution > 0.0) || resolution > 0.1) throw ConfigError("grid resolution must lie in (0, 0.1]");
  prepare(model, users, lambda, trials);
  RateOracle oracle(model, kind, trials, seed);
  const double pmax = max_probability(model, kind);
  const int kmax = static_cast<int>(std::floor(pmax / resolution + 1e-9));
  const auto n = static_cast<std::size_t>(users);

  OptimizationResult result;
  result.method = OptimizationMethod::SimplexGrid;
  std::vector<int> k(n, 0);
  bool have_best = false;
  while (true) {
    double sum = 0.0;
    for (int ki : k) sum += ki * resolution;
    if (sum <= lambda + 1e-12) {
      std::vector<double> p(n);
      for (std::size_t i = 0; i < n; ++i) p[i] = k[i] * resolution;
      auto tp = oracle.evaluate(p);
      tp.iteration = result.iterations++;
      if (!have_best || tp.rate.mean > result.rate.mean) {
        result.best = tp.point;
        result.rate = tp.rate;
        have_best = true;
      }
      result.surface.push_back(std::move(tp));
    }
    std::size_t d = 0;
    while (d < n && ++k[d] > kmax) k[d++] = 0;
    if (d == n) break;
  }
  result.oracle_calls = oracle.calls();
  return result;
}

namespace {

nlohmann::json finite_or_string(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

nlohmann::json trace_json(const std::vector<TracePoint>& points) {
  auto out = nlohmann::json::array();
  for (const auto& tp : points) {
    out.push_back({{"start", tp.start},
                   {"iteration", tp.iteration},
                   {"point", to_json(tp.point)},
                   {"rate", tp.rate.mean},
                   {"std_error", tp.rate.std_error}});
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const ThresholdVector& point) {
  auto taus = nlohmann::json::array();
  for (double t : point.taus) taus.push_back(finite_or_string(t));
  return {{"probs", point.probs}, {"taus", taus}, {"load", point.load()}};
}

nlohmann::json to_json(const OptimizationResult& result) {
  return {{"method", to_string(result.method)},
          {"best", to_json(result.best)},
          {"rate", to_json(result.rate)},
          {"iterations", result.iterations},
          {"oracle_calls", result.oracle_calls},
          {"trace", trace_json(result.trace)},
          {"surface", trace_json(result.surface)}};
}

}  // namespace obf

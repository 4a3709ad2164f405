#include "obf/experiment.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "obf/error.hpp"

namespace obf {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Walks a config document, collecting every violation instead of stopping at
// the first. Threshold probabilities are resolved to taus only when `resolve`
// is set, since MTFP quantiles may need a table build.
class Parser {
 public:
  explicit Parser(bool resolve) : resolve_(resolve) {}

  ExperimentConfig parse(const json& doc) {
    ExperimentConfig cfg;
    cfg.source = doc;
    // Where results land is not part of the experiment's identity.
    if (cfg.source.is_object()) cfg.source.erase("output");
    if (!doc.is_object()) {
      fail("config must be a JSON object");
      return cfg;
    }
    for (const auto& [key, value] : doc.items()) {
      static const std::vector<std::string> known{"task",  "seed",     "trials",   "lambda",   "log_base", "model",
                                                  "policies", "match", "verify", "classify", "optimize", "output"};
      if (std::find(known.begin(), known.end(), key) == known.end()) fail("unknown key '" + key + "'");
    }

    if (auto t = string_at(doc, "task", true)) {
      try {
        cfg.task = task_from_string(*t);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
    }
    if (!doc.contains("seed")) {
      fail("seed is mandatory");
    } else if (!doc["seed"].is_number_unsigned()) {
      fail("seed must be a nonnegative integer");
    } else {
      cfg.seed = doc["seed"].get<std::uint64_t>();
    }
    if (auto n = integer_at(doc, "trials", true)) {
      if (*n < 100) fail("trials must be at least 100");
      cfg.trials = *n;
    }
    if (auto lb = string_at(doc, "log_base", false)) {
      try {
        cfg.unit = rate_unit_from_string(*lb);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
    }
    const bool needs_lambda = cfg.task == Task::Optimize;
    if (auto l = number_at(doc, "lambda", needs_lambda)) {
      if (!(*l >= 0.0)) {
        fail("infeasible feedback budget: lambda must be nonnegative");
      } else {
        cfg.lambda = *l;
      }
    }

    if (!doc.contains("model") || !doc["model"].is_object()) {
      fail("model block is required");
    } else {
      parse_model(doc["model"], cfg.model);
    }

    if (doc.contains("match")) parse_match(doc["match"], cfg.match);
    if (doc.contains("verify")) parse_verify(doc["verify"], cfg.verify);
    cfg.verify.match_samples = cfg.match.samples;
    cfg.verify.match_seed = cfg.match.seed;
    if (doc.contains("classify")) {
      if (auto m = integer_at(doc["classify"], "matrices", false)) {
        if (*m < 100) fail("classify.matrices must be at least 100");
        cfg.classify_matrices = *m;
      }
    }
    if (doc.contains("optimize")) parse_optimize(doc["optimize"], cfg.optimize);
    if (doc.contains("output")) {
      if (auto d = string_at(doc["output"], "dir", false)) cfg.out_dir = *d;
    }

    const bool needs_policies = cfg.task != Task::Optimize;
    if (doc.contains("policies")) {
      if (!doc["policies"].is_array()) {
        fail("policies must be a list");
      } else if (model_ok_) {
        for (std::size_t j = 0; j < doc["policies"].size(); ++j) parse_policy(doc["policies"][j], j, cfg);
      }
    }
    if (needs_policies && cfg.policies.empty() && !policy_errors_) {
      fail("task '" + to_string(cfg.task) + "' needs at least one policy");
    }
    check_task_fit(cfg);
    return cfg;
  }

  const std::vector<std::string>& diagnostics() const { return diags_; }

 private:
  void fail(std::string message) { diags_.push_back(std::move(message)); }

  std::optional<std::string> string_at(const json& obj, const std::string& key, bool required) {
    if (!obj.is_object() || !obj.contains(key)) {
      if (required) fail(key + " is required");
      return std::nullopt;
    }
    if (!obj[key].is_string()) {
      fail(key + " must be a string");
      return std::nullopt;
    }
    return obj[key].get<std::string>();
  }

  std::optional<double> number_at(const json& obj, const std::string& key, bool required) {
    if (!obj.is_object() || !obj.contains(key)) {
      if (required) fail(key + " is required");
      return std::nullopt;
    }
    const auto& v = obj[key];
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && v.get<std::string>() == "inf") return kInf;
    fail(key + " must be a number");
    return std::nullopt;
  }

  std::optional<std::int64_t> integer_at(const json& obj, const std::string& key, bool required) {
    if (!obj.is_object() || !obj.contains(key)) {
      if (required) fail(key + " is required");
      return std::nullopt;
    }
    if (!obj[key].is_number_integer()) {
      fail(key + " must be an integer");
      return std::nullopt;
    }
    return obj[key].get<std::int64_t>();
  }

  void parse_model(const json& m, ChannelModel& model) {
    const std::size_t before = diags_.size();
    if (auto k = string_at(m, "kind", true)) {
      try {
        model.kind = fading_kind_from_string(*k);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
    }
    if (auto v = number_at(m, "snr", true)) model.snr = *v;
    if (auto v = integer_at(m, "beams", true)) model.beams = static_cast<int>(*v);
    if (auto v = integer_at(m, "users", true)) model.users = static_cast<int>(*v);
    if (auto v = number_at(m, "rician_k", false)) model.rician_k = *v;
    if (auto v = number_at(m, "nakagami_m", false)) model.nakagami_m = *v;
    if (auto v = string_at(m, "synthetic", false)) {
      try {
        model.synthetic = synthetic_marginal_from_string(*v);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
    }
    if (m.contains("snr_multipliers")) {
      if (!m["snr_multipliers"].is_array()) {
        fail("model.snr_multipliers must be a list of numbers");
      } else {
        for (const auto& x : m["snr_multipliers"]) {
          if (!x.is_number()) {
            fail("model.snr_multipliers must be a list of numbers");
            break;
          }
          model.snr_multipliers.push_back(x.get<double>());
        }
      }
    }
    if (diags_.size() == before) {
      try {
        model.validate();
        model_ok_ = true;
      } catch (const std::exception& e) {
        fail(std::string("model: ") + e.what());
      }
    }
  }

  void parse_match(const json& m, MatchSettings& s) {
    if (auto k = string_at(m, "kind", false)) {
      try {
        s.kind = match_kind_from_string(*k);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
    }
    if (auto n = integer_at(m, "samples", false)) {
      if (*n < 1000) fail("match.samples must be at least 1000");
      s.samples = *n;
    }
    if (m.contains("seed")) {
      if (!m["seed"].is_number_unsigned()) {
        fail("match.seed must be a nonnegative integer");
      } else {
        s.seed = m["seed"].get<std::uint64_t>();
      }
    }
  }

  void parse_verify(const json& v, VerifyOptions& o) {
    if (auto x = integer_at(v, "spot_checks", false)) o.spot_checks = static_cast<int>(*x);
    if (auto x = integer_at(v, "spot_trials", false)) {
      if (*x < 100) fail("verify.spot_trials must be at least 100");
      o.spot_trials = *x;
    }
    if (auto x = number_at(v, "slack_se", false)) o.slack_se = *x;
  }

  void parse_optimize(const json& o, OptimizeSettings& s) {
    if (auto m = string_at(o, "method", false)) {
      if (*m == "homogeneous") {
        s.method = OptimizationMethod::Homogeneous;
      } else if (*m == "coordinate-ascent") {
        s.method = OptimizationMethod::CoordinateAscent;
      } else if (*m == "simplex-grid") {
        s.method = OptimizationMethod::SimplexGrid;
      } else {
        fail("optimize.method must be 'homogeneous', 'coordinate-ascent' or 'simplex-grid'");
      }
    }
    if (auto k = string_at(o, "kind", false)) {
      try {
        s.kind = match_kind_from_string(*k);
      } catch (const ConfigError& e) {
        fail(e.what());
      }
    }
    if (auto r = number_at(o, "resolution", false)) s.resolution = *r;
    if (o.contains("init")) {
      if (!o["init"].is_array()) {
        fail("optimize.init must be a list of probabilities");
      } else {
        for (const auto& x : o["init"]) {
          if (!x.is_number()) {
            fail("optimize.init must be a list of probabilities");
            break;
          }
          s.init.push_back(x.get<double>());
        }
      }
    }
    if (auto x = integer_at(o, "random_starts", false)) s.options.random_starts = static_cast<int>(*x);
    if (auto x = integer_at(o, "max_cycles", false)) s.options.max_cycles = static_cast<int>(*x);
    if (auto x = integer_at(o, "coarse_points", false)) s.options.coarse_points = static_cast<int>(*x);
    if (auto x = number_at(o, "tolerance", false)) s.options.tolerance = *x;
  }

  std::optional<Interval> parse_interval(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2) {
      fail(where + ": interval must be [lo, hi]");
      return std::nullopt;
    }
    auto bound = [&](const json& b, double fallback) -> std::optional<double> {
      if (b.is_null()) return fallback;
      if (b.is_number()) return b.get<double>();
      if (b.is_string() && b.get<std::string>() == "inf") return kInf;
      fail(where + ": interval bounds must be numbers, null or \"inf\"");
      return std::nullopt;
    };
    auto lo = bound(j[0], 0.0);
    auto hi = bound(j[1], kInf);
    if (!lo || !hi) return std::nullopt;
    if (!(*lo >= 0.0) || !(*hi >= *lo)) {
      fail(where + ": interval needs 0 <= lo <= hi");
      return std::nullopt;
    }
    return Interval{*lo, *hi};
  }

  std::optional<FeedbackRule> parse_rule(const json& r, int user, const ChannelModel& model,
                                         const std::string& where) {
    if (!r.is_object()) {
      fail(where + ": rule must be an object");
      return std::nullopt;
    }
    const auto kind = string_at(r, "kind", true);
    if (!kind) return std::nullopt;
    if (*kind == "never") return never_feedback_rule(user);
    if (*kind == "always") return always_feedback_rule(user);
    if (*kind == "gtfp" || *kind == "mtfp") {
      const bool general = *kind == "gtfp";
      const bool has_tau = r.contains("tau");
      const bool has_p = r.contains("probability");
      if (has_tau == has_p) {
        fail(where + ": threshold rule needs exactly one of 'tau' or 'probability'");
        return std::nullopt;
      }
      double tau = 0.0;
      if (has_tau) {
        auto t = number_at(r, "tau", true);
        if (!t) return std::nullopt;
        if (!(*t >= 0.0)) {
          fail(where + ": tau must be nonnegative");
          return std::nullopt;
        }
        tau = *t;
      } else {
        auto p = number_at(r, "probability", true);
        if (!p) return std::nullopt;
        const double pmax = general ? 1.0 : 1.0 / model.beams;
        if (!(*p >= 0.0) || *p > pmax) {
          fail(where + ": probability must lie in [0, " + std::to_string(pmax) + "]");
          return std::nullopt;
        }
        if (resolve_) {
          tau = general ? upper_quantile(model, *p, SinrStatistic::Beam1, user)
                        : upper_quantile(model, std::min(1.0, *p * model.beams), SinrStatistic::MaxOverBeams, user);
        }
      }
      return general ? FeedbackRule::general_threshold(user, tau) : FeedbackRule::max_sinr_threshold(user, tau);
    }
    if (*kind == "box_union") {
      if (!r.contains("boxes") || !r["boxes"].is_array() || r["boxes"].empty()) {
        fail(where + ": box_union needs a nonempty 'boxes' list");
        return std::nullopt;
      }
      BoxUnionRegion region;
      for (const auto& b : r["boxes"]) {
        if (!b.is_array() || static_cast<int>(b.size()) != model.beams) {
          fail(where + ": every box needs one interval per beam");
          return std::nullopt;
        }
        Box box;
        for (const auto& side : b) {
          auto iv = parse_interval(side, where);
          if (!iv) return std::nullopt;
          box.sides.push_back(*iv);
        }
        region.boxes.push_back(std::move(box));
      }
      return FeedbackRule::box_union(user, std::move(region));
    }
    if (*kind == "max_sinr_box_union") {
      if (!r.contains("intervals") || !r["intervals"].is_array() || r["intervals"].empty()) {
        fail(where + ": max_sinr_box_union needs a nonempty 'intervals' list");
        return std::nullopt;
      }
      IntervalUnion region;
      for (const auto& side : r["intervals"]) {
        auto iv = parse_interval(side, where);
        if (!iv) return std::nullopt;
        region.intervals.push_back(*iv);
      }
      return FeedbackRule::max_sinr_box_union(user, std::move(region));
    }
    fail(where + ": unknown rule kind '" + *kind + "'");
    return std::nullopt;
  }

  void parse_policy(const json& p, std::size_t index, ExperimentConfig& cfg) {
    const std::size_t before = diags_.size();
    const std::string where = "policies[" + std::to_string(index) + "]";
    if (!p.is_object()) {
      fail(where + " must be an object");
      policy_errors_ = true;
      return;
    }
    std::string label = p.contains("label") && p["label"].is_string() ? p["label"].get<std::string>()
                                                                        : "policy-" + std::to_string(index);
    const int n = cfg.model.users;
    const int forms = static_cast<int>(p.contains("rule")) + static_cast<int>(p.contains("rules")) +
                      static_cast<int>(p.contains("random_box_union")) +
                      static_cast<int>(p.contains("random_max_sinr_box_union"));
    if (forms != 1) {
      fail(where + ": give exactly one of 'rule', 'rules', 'random_box_union', 'random_max_sinr_box_union'");
    } else if (p.contains("rule")) {
      PolicySpec spec;
      spec.label = label;
      for (int i = 0; i < n; ++i) {
        auto r = parse_rule(p["rule"], i, cfg.model, where);
        if (!r) break;
        spec.rules.push_back(*r);
      }
      if (static_cast<int>(spec.rules.size()) == n) cfg.policies.push_back(std::move(spec));
    } else if (p.contains("rules")) {
      if (!p["rules"].is_array()) {
        fail(where + ": rules must be a list");
      } else if (static_cast<int>(p["rules"].size()) != n) {
        fail(where + ": policy has " + std::to_string(p["rules"].size()) + " rules but the model has " +
             std::to_string(n) + " users");
      } else {
        PolicySpec spec;
        spec.label = label;
        for (int i = 0; i < n; ++i) {
          auto r = parse_rule(p["rules"][static_cast<std::size_t>(i)], i, cfg.model,
                              where + ".rules[" + std::to_string(i) + "]");
          if (r) spec.rules.push_back(*r);
        }
        if (static_cast<int>(spec.rules.size()) == n) cfg.policies.push_back(std::move(spec));
      }
    } else {
      const bool max_kind = p.contains("random_max_sinr_box_union");
      const json& r = max_kind ? p["random_max_sinr_box_union"] : p["random_box_union"];
      const auto count = integer_at(r, "count", false).value_or(1);
      std::uint64_t seed = 0;
      if (!r.is_object() || !r.contains("seed") || !r["seed"].is_number_unsigned()) {
        fail(where + ": random policies need a nonnegative integer 'seed'");
      } else {
        seed = r["seed"].get<std::uint64_t>();
      }
      if (count < 1) fail(where + ": count must be positive");
      if (diags_.size() == before) {
        for (std::int64_t c = 0; c < count; ++c) {
          const std::string l = count == 1 ? label : label + "-" + std::to_string(c);
          const std::uint64_t s = seed + static_cast<std::uint64_t>(c);
          cfg.policies.push_back(max_kind ? random_max_sinr_box_union_policy(n, s, l)
                                          : random_box_union_policy(n, cfg.model.beams, s, l));
        }
      }
    }
    if (diags_.size() != before) policy_errors_ = true;
  }

  void check_task_fit(const ExperimentConfig& cfg) {
    const bool matching = cfg.task == Task::Match || cfg.task == Task::VerifyTheorem1 ||
                          cfg.task == Task::VerifyChain || cfg.task == Task::ClassifyEvents;
    if (matching && cfg.match.kind == MatchKind::Mtfp) {
      for (const auto& p : cfg.policies) {
        if (!p.all_max_sinr_kind()) {
          fail("invalid policy kind for task: maximum-SINR matching needs policy '" + p.label +
               "' to use only maximum-SINR rules");
        }
      }
    }
    if (cfg.task == Task::Optimize && model_ok_) {
      const auto& o = cfg.optimize;
      if (o.method == OptimizationMethod::SimplexGrid) {
        if (cfg.model.users > 3) fail("simplex-grid optimization is limited to n <= 3 users");
        if (!(o.resolution > 0.0) || o.resolution > 0.1) fail("optimize.resolution must lie in (0, 0.1]");
      }
      if (o.method == OptimizationMethod::Homogeneous && !(cfg.lambda > 0.0)) {
        fail("infeasible feedback budget: homogeneous search needs lambda > 0");
      }
      if (!o.init.empty()) {
        if (static_cast<int>(o.init.size()) != cfg.model.users) {
          fail("optimize.init needs one probability per user");
        } else {
          double sum = 0.0;
          for (double x : o.init) sum += x;
          if (sum > cfg.lambda + 1e-9) fail("infeasible feedback budget: optimize.init exceeds lambda");
        }
      }
    }
  }

  bool resolve_;
  bool model_ok_ = false;
  bool policy_errors_ = false;
  std::vector<std::string> diags_;
};

std::string fmt_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Long-format CSV: one measurement per row, each tagged with the config hash and seed.
class LongCsv {
 public:
  LongCsv(std::string hash, std::uint64_t seed) : hash_(std::move(hash)), seed_(seed) {
    out_ << "config_hash,seed,policy,metric,index,value\n";
  }

  void row(const std::string& policy, const std::string& metric, long long index, double value) {
    out_ << hash_ << ',' << seed_ << ',' << quote(policy) << ',' << metric << ',' << index << ','
         << fmt_double(value) << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }

  std::string hash_;
  std::uint64_t seed_;
  std::ostringstream out_;
};

void rate_rows(LongCsv& csv, const std::string& label, const std::string& prefix, const RateEstimate& e) {
  csv.row(label, prefix + "rate_mean", -1, e.mean);
  csv.row(label, prefix + "rate_std_error", -1, e.std_error);
  csv.row(label, prefix + "rate_ci95_lo", -1, e.ci95_lo);
  csv.row(label, prefix + "rate_ci95_hi", -1, e.ci95_hi);
  for (std::size_t m = 0; m < e.per_beam_means.size(); ++m) {
    csv.row(label, prefix + "beam_rate_mean", static_cast<long long>(m + 1), e.per_beam_means[m]);
  }
}

json header(const ExperimentConfig& cfg, const std::string& hash) {
  return {{"config_hash", hash},
          {"seed", cfg.seed},
          {"task", to_string(cfg.task)},
          {"trials", cfg.trials},
          {"unit", to_string(cfg.unit)},
          {"model_hash", cfg.model.hash()},
          {"config", cfg.source}};
}

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::Simulate: return "simulate";
    case Task::Match: return "match";
    case Task::VerifyTheorem1: return "verify-theorem1";
    case Task::VerifyChain: return "verify-chain";
    case Task::ClassifyEvents: return "classify-events";
    case Task::Optimize: return "optimize";
  }
  return "simulate";
}

Task task_from_string(std::string_view name) {
  for (Task t : {Task::Simulate, Task::Match, Task::VerifyTheorem1, Task::VerifyChain, Task::ClassifyEvents,
                 Task::Optimize}) {
    if (name == to_string(t)) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(source.dump()); }

json apply_overrides(json config, const ConfigOverrides& o) {
  if (!config.is_object()) return config;
  if (o.seed) config["seed"] = *o.seed;
  if (o.trials) config["trials"] = *o.trials;
  if (o.log_base) config["log_base"] = *o.log_base;
  if (o.out_dir) config["output"]["dir"] = *o.out_dir;
  return config;
}

std::vector<std::string> validate_config(const json& config) {
  Parser parser(false);
  parser.parse(config);
  return parser.diagnostics();
}

ExperimentConfig parse_config(const json& config) {
  Parser parser(true);
  auto cfg = parser.parse(config);
  if (!parser.diagnostics().empty()) {
    std::string msg = "invalid config:";
    for (const auto& d : parser.diagnostics()) msg += "\n  " + d;
    throw ConfigError(msg);
  }
  return cfg;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

ResultBundle run(const ExperimentConfig& cfg) {
  ResultBundle bundle;
  bundle.config_hash = cfg.hash();
  LongCsv csv(bundle.config_hash, cfg.seed);
  json report = header(cfg, bundle.config_hash);
  const std::string stem = to_string(cfg.task);
  std::vector<std::pair<std::string, std::string>> extra;

  switch (cfg.task) {
    case Task::Simulate: {
      auto results = json::array();
      for (const auto& p : cfg.policies) {
        const auto e = ergodic_rate(p, cfg.model, cfg.trials, cfg.seed).in(cfg.unit);
        rate_rows(csv, p.label, "", e);
        results.push_back({{"label", p.label}, {"rate", to_json(e)}});
      }
      report["results"] = results;
      break;
    }
    case Task::Match: {
      auto results = json::array();
      for (const auto& p : cfg.policies) {
        const auto pair = match_policy(p, cfg.model, cfg.match.kind, cfg.match.samples, cfg.match.seed);
        for (std::size_t i = 0; i < pair.thresholds.size(); ++i) {
          const auto u = static_cast<long long>(i + 1);
          csv.row(p.label, "threshold", u, pair.thresholds[i]);
          csv.row(p.label, "original_probability", u, pair.original_probabilities[i]);
          csv.row(p.label, "matched_probability", u, pair.matched_probabilities[i]);
        }
        csv.row(p.label, "load_original", -1, pair.load_original);
        csv.row(p.label, "load_matched", -1, pair.load_matched);
        results.push_back(to_json(pair));
        if (!pair.load_matched_within(load_tolerance(pair.users()))) bundle.passed = false;
      }
      report["results"] = results;
      break;
    }
    case Task::VerifyTheorem1: {
      auto results = json::array();
      int passed = 0;
      for (const auto& p : cfg.policies) {
        auto r = verify_theorem1(p, cfg.model, cfg.match.kind, cfg.trials, cfg.seed, cfg.verify);
        r.rate_original = r.rate_original.in(cfg.unit);
        r.rate_switched = r.rate_switched.in(cfg.unit);
        csv.row(p.label, "rate_original", -1, r.rate_original.mean);
        csv.row(p.label, "rate_switched", -1, r.rate_switched.mean);
        csv.row(p.label, "mean_difference_nats", -1, r.mean_difference);
        csv.row(p.label, "std_error_nats", -1, r.std_error);
        csv.row(p.label, "load_tolerance_achieved", -1, r.load_tolerance_achieved);
        csv.row(p.label, "pass", -1, r.pass ? 1.0 : 0.0);
        passed += r.pass ? 1 : 0;
        results.push_back(to_json(r));
      }
      report["results"] = results;
      report["passed"] = passed;
      report["total"] = cfg.policies.size();
      bundle.passed = passed == static_cast<int>(cfg.policies.size());
      break;
    }
    case Task::VerifyChain: {
      auto results = json::array();
      int passed = 0;
      for (const auto& p : cfg.policies) {
        const auto r = verify_monotone_chain(p, cfg.model, cfg.match.kind, cfg.trials, cfg.seed, cfg.verify);
        for (std::size_t k = 0; k < r.rates.size(); ++k) {
          csv.row(p.label, "rate_nats", static_cast<long long>(k), r.rates[k]);
          csv.row(p.label, "load", static_cast<long long>(k), r.loads[k]);
        }
        for (const auto& s : r.steps) {
          csv.row(p.label, "step_difference_nats", s.k, s.mean_difference);
          csv.row(p.label, "step_std_error_nats", s.k, s.std_error);
        }
        csv.row(p.label, "pass", -1, r.pass ? 1.0 : 0.0);
        passed += r.pass ? 1 : 0;
        results.push_back(to_json(r));
      }
      report["results"] = results;
      report["passed"] = passed;
      report["total"] = cfg.policies.size();
      bundle.passed = passed == static_cast<int>(cfg.policies.size());
      break;
    }
    case Task::ClassifyEvents: {
      auto results = json::array();
      for (const auto& p : cfg.policies) {
        const auto pair = match_policy(p, cfg.model, cfg.match.kind, cfg.match.samples, cfg.match.seed);
        const auto a = audit_events(pair, cfg.model, cfg.classify_matrices, cfg.seed, cfg.verify.slack_se);
        csv.row(p.label, "loss_events", -1, static_cast<double>(a.by_lemma.loss));
        csv.row(p.label, "gain_events", -1, static_cast<double>(a.by_lemma.gain));
        csv.row(p.label, "neutral_events", -1, static_cast<double>(a.by_lemma.neutral));
        csv.row(p.label, "disagreements", -1, static_cast<double>(a.disagreements));
        for (const auto& m : a.mass_balance) {
          csv.row(p.label, "gain_mass", m.user + 1, m.gain_mass);
          csv.row(p.label, "loss_mass", m.user + 1, m.loss_mass);
          csv.row(p.label, "mass_std_error", m.user + 1, m.std_error);
        }
        bundle.passed = bundle.passed && a.pass;
        auto j = to_json(a);
        j["label"] = p.label;
        j["match"] = to_json(pair);
        results.push_back(j);
      }
      report["results"] = results;
      break;
    }
    case Task::Optimize: {
      const auto& o = cfg.optimize;
      OptimizationResult r;
      if (o.method == OptimizationMethod::Homogeneous) {
        r = homogeneous_search(cfg.model, cfg.model.users, cfg.lambda, o.kind, cfg.trials, cfg.seed, o.options);
      } else if (o.method == OptimizationMethod::SimplexGrid) {
        r = simplex_grid(cfg.model, cfg.model.users, cfg.lambda, o.kind, o.resolution, cfg.trials, cfg.seed);
      } else {
        std::vector<double> init = o.init;
        if (init.empty()) {
          const double p = std::min(max_probability(cfg.model, o.kind), cfg.lambda / cfg.model.users);
          init.assign(static_cast<std::size_t>(cfg.model.users), p);
        }
        auto model = cfg.model;
        const auto start = thresholds_from_probabilities(model, o.kind, init);
        r = coordinate_ascent(cfg.model, cfg.model.users, cfg.lambda, o.kind, cfg.trials, cfg.seed, start, o.options);
      }
      const std::string label = to_string(o.kind) + "/" + to_string(o.method);
      rate_rows(csv, label, "best_", r.rate.in(cfg.unit));
      for (std::size_t i = 0; i < r.best.probs.size(); ++i) {
        csv.row(label, "best_probability", static_cast<long long>(i + 1), r.best.probs[i]);
        csv.row(label, "best_threshold", static_cast<long long>(i + 1), r.best.taus[i]);
      }

      // Trace and surface as long-format rows keyed by iteration.
      auto points_csv = [&](const std::vector<TracePoint>& pts) {
        LongCsv t(bundle.config_hash, cfg.seed);
        for (const auto& tp : pts) {
          const std::string key = label + "#" + std::to_string(tp.start) + ":" + std::to_string(tp.iteration);
          for (std::size_t i = 0; i < tp.point.probs.size(); ++i) {
            t.row(key, "probability", static_cast<long long>(i + 1), tp.point.probs[i]);
            t.row(key, "threshold", static_cast<long long>(i + 1), tp.point.taus[i]);
          }
          const auto e = tp.rate.in(cfg.unit);
          t.row(key, "rate_mean", -1, e.mean);
          t.row(key, "rate_std_error", -1, e.std_error);
        }
        return t.str();
      };
      extra.emplace_back("optimize_trace.csv", points_csv(r.trace));
      if (!r.surface.empty()) extra.emplace_back("optimize_surface.csv", points_csv(r.surface));
      auto j = to_json(r);
      j["rate"] = to_json(r.rate.in(cfg.unit));
      report["result"] = j;
      break;
    }
  }

  report["pass"] = bundle.passed;
  const auto json_path = cfg.out_dir / (stem + ".json");
  const auto csv_path = cfg.out_dir / (stem + ".csv");
  write_file_atomic(json_path, report.dump(2) + "\n");
  write_file_atomic(csv_path, csv.str());
  bundle.files = {json_path, csv_path};
  for (const auto& [name, body] : extra) {
    write_file_atomic(cfg.out_dir / name, body);
    bundle.files.push_back(cfg.out_dir / name);
  }
  bundle.summary = {{"config_hash", bundle.config_hash}, {"task", stem}, {"pass", bundle.passed}};
  return bundle;
}

}  // namespace obf

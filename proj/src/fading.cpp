#include "obf/fading.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "obf/error.hpp"
#include "obf/parallel.hpp"

namespace obf {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

template <class T>
void fnv(std::uint64_t& h, T value) {
  fnv_bytes(h, &value, sizeof(value));
}

bool is_rayleigh_like(const ChannelModel& m) {
  return m.kind == FadingKind::RayleighBeamforming ||
         (m.kind == FadingKind::RicianBeamforming && m.rician_k == 0.0) ||
         (m.kind == FadingKind::NakagamiBeamforming && m.nakagami_m == 1.0);
}

void check_sinr_argument(double x) {
  if (std::isnan(x) || x < 0.0) throw DomainError("SINR argument must be nonnegative");
}

void check_probability(double q) {
  if (std::isnan(q) || q < 0.0 || q > 1.0) throw DomainError("probability must lie in [0, 1]");
}

// P(X >= t) for one unit-mean per-beam channel power.
double power_survival(const ChannelModel& m, double t) {
  if (t <= 0.0) return 1.0;
  switch (m.kind) {
    case FadingKind::RicianBeamforming: {
      const double k = m.rician_k;
      boost::math::non_central_chi_squared_distribution<double> ncx(2.0, 2.0 * k);
      return boost::math::cdf(boost::math::complement(ncx, 2.0 * (k + 1.0) * t));
    }
    case FadingKind::NakagamiBeamforming:
      return boost::math::gamma_q(m.nakagami_m, m.nakagami_m * t);
    default:
      return std::exp(-t);
  }
}

// Density of the interference power: sum of M-1 i.i.d. per-beam powers.
double interference_pdf(const ChannelModel& m, double y) {
  const double others = static_cast<double>(m.beams - 1);
  if (m.kind == FadingKind::RicianBeamforming) {
    const double k = m.rician_k;
    boost::math::non_central_chi_squared_distribution<double> ncx(2.0 * others, 2.0 * k * others);
    return 2.0 * (k + 1.0) * boost::math::pdf(ncx, 2.0 * (k + 1.0) * y);
  }
  const double mm = m.nakagami_m;
  boost::math::gamma_distribution<double> g(mm * others, 1.0 / mm);
  return boost::math::pdf(g, y);
}

// Single-user law (rho already folded into m.snr).
double law_survival(const ChannelModel& m, double x) {
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double rho = m.snr;
  if (m.kind == FadingKind::Synthetic) {
    if (m.synthetic == SyntheticMarginal::Exponential) return std::exp(-x / rho);
    return std::max(0.0, 1.0 - x / (2.0 * rho));
  }
  if (is_rayleigh_like(m)) {
    return std::exp(-x / rho - static_cast<double>(m.beams - 1) * std::log1p(x));
  }
  if (m.beams == 1) return power_survival(m, x / rho);
  auto integrand = [&](double y) { return interference_pdf(m, y) * power_survival(m, x / rho + x * y); };
  boost::math::quadrature::tanh_sinh<double> near;
  boost::math::quadrature::exp_sinh<double> far;
  const double value = near.integrate(integrand, 0.0, 1.0) + far.integrate(integrand, 1.0,
                                                                           std::numeric_limits<double>::infinity());
  return std::clamp(value, 0.0, 1.0);
}

double law_quantile_beam1(const ChannelModel& m, double q) {
  if (q >= 1.0) return 0.0;
  if (q <= 0.0) return kNeverFeedback;
  const double rho = m.snr;
  if (m.kind == FadingKind::Synthetic) {
    if (m.synthetic == SyntheticMarginal::Exponential) return -rho * std::log(q);
    return 2.0 * rho * (1.0 - q);
  }
  if (is_rayleigh_like(m) && m.beams == 1) return -rho * std::log(q);

  double hi = 1.0;
  while (law_survival(m, hi) > q) {
    hi *= 2.0;
    if (hi > 1e300) return kNeverFeedback;
  }
  // Solve in log space so tiny tail probabilities keep full relative accuracy.
  const double log_q = std::log(q);
  auto f = [&](double x) {
    const double s = law_survival(m, x);
    return (s > 0.0 ? std::log(s) : -745.0) - log_q;
  };
  std::uintmax_t iterations = 200;
  const auto [lo_x, hi_x] = boost::math::tools::toms748_solve(
      f, 0.0, hi, f(0.0), f(hi), boost::math::tools::eps_tolerance<double>(50), iterations);
  return 0.5 * (lo_x + hi_x);
}

// Sorted sample of the max-SINR statistic with a piecewise-linear CDF through
// the knots (0, 0) and (a_j, (j + 1) / N).
class EmpiricalTable {
 public:
  explicit EmpiricalTable(std::vector<double> sorted) : a_(std::move(sorted)) {}

  const std::vector<double>& values() const { return a_; }

  double survival(double x) const {
    const auto n = static_cast<double>(a_.size());
    if (x <= 0.0) return 1.0;
    if (x >= a_.back()) return 0.0;
    const auto it = std::lower_bound(a_.begin(), a_.end(), x);
    const auto idx = static_cast<std::size_t>(it - a_.begin());
    const double left_x = idx == 0 ? 0.0 : a_[idx - 1];
    const double right_x = a_[idx];
    const double gap = right_x - left_x;
    const double frac = gap > 0.0 ? (x - left_x) / gap : 1.0;
    return 1.0 - (static_cast<double>(idx) + frac) / n;
  }

  double quantile(double q) const {
    const auto n = a_.size();
    const double target = (1.0 - q) * static_cast<double>(n);
    if (target <= 0.0) return 0.0;
    if (target >= static_cast<double>(n)) return a_.back();
    const auto j = static_cast<std::size_t>(std::floor(target));
    const double frac = target - static_cast<double>(j);
    const double xj = j == 0 ? 0.0 : a_[j - 1];
    return xj + frac * (a_[j] - xj);
  }

 private:
  std::vector<double> a_;
};

std::mutex g_table_mutex;
std::map<std::uint64_t, std::shared_ptr<const EmpiricalTable>> g_tables;
std::filesystem::path g_cache_dir;

constexpr char kTableMagic[8] = {'O', 'B', 'F', 'Q', 'T', 'A', 'B', '1'};

std::shared_ptr<const EmpiricalTable> load_table(const std::filesystem::path& path, std::uint64_t key) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return nullptr;
  char magic[8];
  std::uint64_t stored_key = 0;
  std::uint64_t count = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&stored_key), sizeof(stored_key));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || std::memcmp(magic, kTableMagic, sizeof(magic)) != 0 || stored_key != key ||
      count != kQuantileTableSamples) {
    return nullptr;
  }
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in || !std::is_sorted(values.begin(), values.end())) return nullptr;
  return std::make_shared<const EmpiricalTable>(std::move(values));
}

void store_table(const std::filesystem::path& path, std::uint64_t key, const EmpiricalTable& table) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) return;
    const std::uint64_t count = table.values().size();
    out.write(kTableMagic, sizeof(kTableMagic));
    out.write(reinterpret_cast<const char*>(&key), sizeof(key));
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(table.values().data()),
              static_cast<std::streamsize>(count * sizeof(double)));
    if (!out) return;
  }
  std::filesystem::rename(tmp, path, ec);
}

std::shared_ptr<const EmpiricalTable> max_sinr_table(const ChannelModel& law) {
  std::uint64_t key = law.hash();
  fnv(key, static_cast<std::uint64_t>(kQuantileTableSamples));
  std::lock_guard lock(g_table_mutex);
  if (auto it = g_tables.find(key); it != g_tables.end()) return it->second;

  std::filesystem::path file;
  if (!g_cache_dir.empty()) {
    char name[64];
    std::snprintf(name, sizeof(name), "maxsinr-%016llx.qtab", static_cast<unsigned long long>(key));
    file = g_cache_dir / name;
    if (auto loaded = load_table(file, key)) {
      g_tables.emplace(key, loaded);
      return loaded;
    }
  }

  const SinrSampler sampler(law);
  std::vector<double> values(kQuantileTableSamples);
  parallel::for_each_block(values.size(), [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> v(static_cast<std::size_t>(law.beams));
    for (std::size_t j = begin; j < end; ++j) {
      sampler.sample(0, j, key, StreamDomain::QuantileTable, v);
      values[j] = max_sinr(v);
    }
  });
  std::sort(values.begin(), values.end());
  auto table = std::make_shared<const EmpiricalTable>(std::move(values));
  if (!file.empty()) store_table(file, key, *table);
  g_tables.emplace(key, table);
  return table;
}

double law_max_survival(const ChannelModel& m, double x) {
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double single = law_survival(m, x);
  if (m.beams == 1) return single;
  const auto beams = static_cast<double>(m.beams);
  if (m.kind == FadingKind::Synthetic) return -std::expm1(beams * std::log1p(-single));
  // Beams above 1 are mutually exclusive, so the union bound is exact there.
  if (x >= 1.0) return std::min(1.0, beams * single);
  return max_sinr_table(m)->survival(x);
}

double law_quantile_max(const ChannelModel& m, double q) {
  if (q >= 1.0) return 0.0;
  if (q <= 0.0) return kNeverFeedback;
  if (m.beams == 1) return law_quantile_beam1(m, q);
  const auto beams = static_cast<double>(m.beams);
  if (m.kind == FadingKind::Synthetic) {
    return law_quantile_beam1(m, -std::expm1(std::log1p(-q) / beams));
  }
  if (q <= beams * law_survival(m, 1.0)) return std::max(1.0, law_quantile_beam1(m, q / beams));
  return std::min(1.0, max_sinr_table(m)->quantile(q));
}

}  // namespace

std::string to_string(FadingKind kind) {
  switch (kind) {
    case FadingKind::RayleighBeamforming: return "rayleigh";
    case FadingKind::RicianBeamforming: return "rician";
    case FadingKind::NakagamiBeamforming: return "nakagami";
    case FadingKind::Synthetic: return "synthetic";
  }
  return "unknown";
}

FadingKind fading_kind_from_string(std::string_view name) {
  if (name == "rayleigh") return FadingKind::RayleighBeamforming;
  if (name == "rician") return FadingKind::RicianBeamforming;
  if (name == "nakagami") return FadingKind::NakagamiBeamforming;
  if (name == "synthetic") return FadingKind::Synthetic;
  throw ConfigError("unknown fading kind '" + std::string(name) + "'");
}

std::string to_string(SyntheticMarginal marginal) {
  return marginal == SyntheticMarginal::Exponential ? "exponential" : "uniform";
}

SyntheticMarginal synthetic_marginal_from_string(std::string_view name) {
  if (name == "exponential") return SyntheticMarginal::Exponential;
  if (name == "uniform") return SyntheticMarginal::Uniform;
  throw ConfigError("unknown synthetic marginal '" + std::string(name) + "'");
}

void ChannelModel::validate() const {
  if (!(snr > 0.0) || !std::isfinite(snr)) throw ConfigError("SNR must be positive and finite");
  if (beams < 1) throw ConfigError("beam count M must be at least 1");
  if (beams > 64) throw ConfigError("beam count M must not exceed 64");
  if (users < 1) throw ConfigError("user count n must be at least 1");
  if (kind == FadingKind::RicianBeamforming && !(rician_k >= 0.0 && std::isfinite(rician_k))) {
    throw ConfigError("Rician K-factor must be a finite value >= 0");
  }
  if (kind == FadingKind::NakagamiBeamforming && !(nakagami_m >= 0.5 && std::isfinite(nakagami_m))) {
    throw ConfigError("Nakagami m must be a finite value >= 0.5");
  }
  if (!snr_multipliers.empty()) {
    if (snr_multipliers.size() != static_cast<std::size_t>(users)) {
      throw ConfigError("SNR multiplier count must equal the user count");
    }
    for (double s : snr_multipliers) {
      if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("SNR multipliers must be positive");
    }
  }
}

double ChannelModel::user_snr(int user) const {
  if (snr_multipliers.empty()) return snr;
  return snr * snr_multipliers.at(static_cast<std::size_t>(user));
}

std::uint64_t ChannelModel::hash() const {
  std::uint64_t h = kFnvOffset;
  fnv(h, static_cast<int>(kind));
  fnv(h, std::bit_cast<std::uint64_t>(snr));
  fnv(h, beams);
  fnv(h, users);
  if (kind == FadingKind::RicianBeamforming) fnv(h, std::bit_cast<std::uint64_t>(rician_k));
  if (kind == FadingKind::NakagamiBeamforming) fnv(h, std::bit_cast<std::uint64_t>(nakagami_m));
  if (kind == FadingKind::Synthetic) fnv(h, static_cast<int>(synthetic));
  for (double s : snr_multipliers) fnv(h, std::bit_cast<std::uint64_t>(s));
  return h;
}

ChannelModel ChannelModel::user_law(int user) const {
  ChannelModel law = *this;
  law.snr = user_snr(user);
  law.users = 1;
  law.snr_multipliers.clear();
  return law;
}

int best_beam(SinrVector v) {
  int best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

double max_sinr(SinrVector v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

SinrMatrix::SinrMatrix(int beams, int users, std::uint64_t model_tag, std::uint64_t trial_index,
                       std::uint64_t seed)
    : beams_(beams),
      users_(users),
      values_(static_cast<std::size_t>(beams) * static_cast<std::size_t>(users), 0.0),
      model_tag_(model_tag),
      trial_index_(trial_index),
      seed_(seed) {
  if (beams < 1 || users < 0) throw ShapeError("SinrMatrix needs M >= 1 and n >= 0");
}

SinrMatrix SinrMatrix::from_columns(const std::vector<std::vector<double>>& columns) {
  if (columns.empty()) throw ShapeError("SinrMatrix::from_columns needs at least one column");
  const auto beams = static_cast<int>(columns.front().size());
  SinrMatrix m(beams, static_cast<int>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].size() != static_cast<std::size_t>(beams)) throw ShapeError("ragged SINR columns");
    std::copy(columns[i].begin(), columns[i].end(), m.column(static_cast<int>(i)).begin());
  }
  return m;
}

SinrVector SinrMatrix::column(int user) const {
  return SinrVector(values_).subspan(index(0, user), static_cast<std::size_t>(beams_));
}

std::span<double> SinrMatrix::column(int user) {
  return std::span<double>(values_).subspan(index(0, user), static_cast<std::size_t>(beams_));
}

void SinrMatrix::set_provenance(std::uint64_t model_tag, std::uint64_t trial_index, std::uint64_t seed) {
  model_tag_ = model_tag;
  trial_index_ = trial_index;
  seed_ = seed;
}

SinrSampler::SinrSampler(const ChannelModel& model) : model_(model), tag_(model.hash()) {
  model_.validate();
  user_snr_.reserve(static_cast<std::size_t>(model_.users));
  for (int i = 0; i < model_.users; ++i) user_snr_.push_back(model_.user_snr(i));
}

void SinrSampler::sample(int user, std::uint64_t trial, std::uint64_t seed, StreamDomain domain,
                         std::span<double> out) const {
  Substream rng(seed, domain, trial, static_cast<std::uint64_t>(user));
  const double rho = user_snr_[static_cast<std::size_t>(user)];
  const std::size_t beams = out.size();

  if (model_.kind == FadingKind::Synthetic) {
    for (double& g : out) {
      g = model_.synthetic == SyntheticMarginal::Exponential ? rho * rng.exponential()
                                                              : 2.0 * rho * rng.uniform();
    }
    return;
  }

  // Per-beam channel powers, unit mean.
  switch (model_.kind) {
    case FadingKind::RicianBeamforming: {
      const double k = model_.rician_k;
      const double los = std::sqrt(k / (k + 1.0));
      const double sigma = std::sqrt(0.5 / (k + 1.0));
      for (double& x : out) {
        const double re = los + sigma * rng.normal();
        const double im = sigma * rng.normal();
        x = re * re + im * im;
      }
      break;
    }
    case FadingKind::NakagamiBeamforming: {
      const double m = model_.nakagami_m;
      for (double& x : out) x = rng.gamma(m) / m;
      break;
    }
    default:
      for (double& x : out) x = rng.exponential();
      break;
  }

  double total = 0.0;
  for (double x : out) total += x;
  for (std::size_t k = 0; k < beams; ++k) {
    const double interference = std::max(0.0, total - out[k]);
    out[k] = rho * out[k] / (1.0 + rho * interference);
  }
}

void SinrSampler::sample_matrix(std::uint64_t trial, std::uint64_t seed, SinrMatrix& out) const {
  if (out.beams() != model_.beams || out.users() != model_.users) {
    out = SinrMatrix(model_.beams, model_.users);
  }
  for (int i = 0; i < model_.users; ++i) sample(i, trial, seed, StreamDomain::Trials, out.column(i));
  out.set_provenance(tag_, trial, seed);
}

SinrMatrix sample_sinr_matrix(const ChannelModel& model, std::uint64_t trial_index, std::uint64_t seed) {
  const SinrSampler sampler(model);
  SinrMatrix out(model.beams, model.users);
  sampler.sample_matrix(trial_index, seed, out);
  return out;
}

double marginal_survival(const ChannelModel& model, double x, int user) {
  check_sinr_argument(x);
  model.validate();
  return law_survival(model.user_law(user), x);
}

double marginal_cdf(const ChannelModel& model, double x, int user) {
  return 1.0 - marginal_survival(model, x, user);
}

double max_sinr_survival(const ChannelModel& model, double x, int user) {
  check_sinr_argument(x);
  model.validate();
  return law_max_survival(model.user_law(user), x);
}

double statistic_survival(const ChannelModel& model, double x, SinrStatistic statistic, int user) {
  return statistic == SinrStatistic::Beam1 ? marginal_survival(model, x, user)
                                           : max_sinr_survival(model, x, user);
}

double upper_quantile(const ChannelModel& model, double q, SinrStatistic statistic, int user) {
  check_probability(q);
  model.validate();
  const ChannelModel law = model.user_law(user);
  return statistic == SinrStatistic::Beam1 ? law_quantile_beam1(law, q) : law_quantile_max(law, q);
}

double max_table_crosscheck(const ChannelModel& model, int user) {
  model.validate();
  const ChannelModel law = model.user_law(user);
  if (law.beams == 1 || !law.is_beamforming()) return 0.0;
  const auto table = max_sinr_table(law);
  double worst = 0.0;
  for (double x : {1.0, 1.25, 1.5, 2.0, 3.0}) {
    const double exact = std::min(1.0, static_cast<double>(law.beams) * law_survival(law, x));
    worst = std::max(worst, std::abs(table->survival(x) - exact));
  }
  return worst;
}

void set_quantile_cache_dir(const std::filesystem::path& dir) {
  std::lock_guard lock(g_table_mutex);
  g_cache_dir = dir;
}

}  // namespace obf

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "obf/rng.hpp"

namespace obf {

enum class FadingKind { RayleighBeamforming, RicianBeamforming, NakagamiBeamforming, Synthetic };

/// Marginal family for the Synthetic kind. Entries are i.i.d. with mean equal
/// to the user's SNR; there is no interference coupling between beams.
enum class SyntheticMarginal { Exponential, Uniform };

enum class SinrStatistic { Beam1, MaxOverBeams };

/// Threshold that no finite SINR reaches.
inline constexpr double kNeverFeedback = std::numeric_limits<double>::infinity();

/// Number of draws in the empirical max-SINR quantile table.
inline constexpr std::size_t kQuantileTableSamples = 1'000'000;

std::string to_string(FadingKind kind);
FadingKind fading_kind_from_string(std::string_view name);
std::string to_string(SyntheticMarginal marginal);
SyntheticMarginal synthetic_marginal_from_string(std::string_view name);

/// Joint SINR law of M statistically identical beams seen by n independent
/// users. Beamforming kinds build beam m's SINR from i.i.d. per-beam channel
/// powers x_k (unit mean) as rho*x_m / (1 + rho*sum_{k != m} x_k).
struct ChannelModel {
  FadingKind kind = FadingKind::RayleighBeamforming;
  double snr = 1.0;
  int beams = 1;
  int users = 1;
  double rician_k = 0.0;
  double nakagami_m = 1.0;
  SyntheticMarginal synthetic = SyntheticMarginal::Exponential;
  /// Optional per-user SNR multipliers; empty means homogeneous users.
  std::vector<double> snr_multipliers;

  /// Throws ConfigError on non-positive SNR, M < 1, n < 1 or bad shape parameters.
  void validate() const;
  double user_snr(int user) const;
  bool is_beamforming() const { return kind != FadingKind::Synthetic; }
  /// Stable 64-bit hash of every parameter that affects the law.
  std::uint64_t hash() const;
  /// Single-user model carrying user's effective SNR.
  ChannelModel user_law(int user) const;
};

using SinrVector = std::span<const double>;

/// Argmax beam; exact ties go to the lowest index.
int best_beam(SinrVector v);
double max_sinr(SinrVector v);

/// M x n SINR realization stored column-major so each user's vector is contiguous.
class SinrMatrix {
 public:
  SinrMatrix() = default;
  SinrMatrix(int beams, int users, std::uint64_t model_tag = 0, std::uint64_t trial_index = 0,
             std::uint64_t seed = 0);

  /// Builds a matrix from user columns; every column must have the same length.
  static SinrMatrix from_columns(const std::vector<std::vector<double>>& columns);

  int beams() const { return beams_; }
  int users() const { return users_; }
  double at(int beam, int user) const { return values_[index(beam, user)]; }
  double& at(int beam, int user) { return values_[index(beam, user)]; }
  SinrVector column(int user) const;
  std::span<double> column(int user);
  std::span<const double> values() const { return values_; }

  std::uint64_t model_tag() const { return model_tag_; }
  std::uint64_t trial_index() const { return trial_index_; }
  std::uint64_t seed() const { return seed_; }
  void set_provenance(std::uint64_t model_tag, std::uint64_t trial_index, std::uint64_t seed);

  bool operator==(const SinrMatrix& other) const = default;

 private:
  std::size_t index(int beam, int user) const {
    return static_cast<std::size_t>(user) * static_cast<std::size_t>(beams_) +
           static_cast<std::size_t>(beam);
  }

  int beams_ = 0;
  int users_ = 0;
  std::vector<double> values_;
  std::uint64_t model_tag_ = 0;
  std::uint64_t trial_index_ = 0;
  std::uint64_t seed_ = 0;
};

/// Precomputed per-user sampling state for hot loops. Column i of trial t is
/// drawn from the substream (seed, domain, t, i) only.
class SinrSampler {
 public:
  explicit SinrSampler(const ChannelModel& model);

  const ChannelModel& model() const { return model_; }
  void sample(int user, std::uint64_t trial, std::uint64_t seed, StreamDomain domain,
              std::span<double> out) const;
  void sample_matrix(std::uint64_t trial, std::uint64_t seed, SinrMatrix& out) const;

 private:
  ChannelModel model_;
  std::vector<double> user_snr_;
  std::uint64_t tag_;
};

SinrMatrix sample_sinr_matrix(const ChannelModel& model, std::uint64_t trial_index,
                              std::uint64_t seed);

/// P(gamma_{i,1} >= x) for the given user.
double marginal_survival(const ChannelModel& model, double x, int user = 0);
/// P(gamma_{i,1} <= x). Closed form for Rayleigh beamforming and Synthetic,
/// adaptive quadrature over the interference power for Rician and Nakagami.
double marginal_cdf(const ChannelModel& model, double x, int user = 0);
/// P(max_k gamma_{i,k} >= x).
double max_sinr_survival(const ChannelModel& model, double x, int user = 0);
double statistic_survival(const ChannelModel& model, double x, SinrStatistic statistic,
                          int user = 0);

/// Threshold tau with P(statistic >= tau) = q. Returns 0 for q = 1 and
/// kNeverFeedback for q = 0.
double upper_quantile(const ChannelModel& model, double q, SinrStatistic statistic, int user = 0);

/// Largest gap between the empirical max-SINR table and the exact identity
/// P(max >= x) = M * P(gamma_1 >= x), probed on x >= 1. Zero when no table is used.
double max_table_crosscheck(const ChannelModel& model, int user = 0);

/// Directory for persisted quantile tables; an empty path disables persistence.
void set_quantile_cache_dir(const std::filesystem::path& dir);

}  // namespace obf

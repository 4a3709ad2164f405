#pragma once

#include <cstdint>

namespace obf {

/// Stream domains keep calibration, trial and table draws from overlapping
/// even when they share a user seed.
enum class StreamDomain : std::uint64_t {
  Trials = 1,
  Calibration = 2,
  QuantileTable = 3,
  Probes = 4,
  Conditional = 5,
  Search = 6,
  PolicyDraw = 7,
};

std::uint64_t mix64(std::uint64_t x);

/// Counter-based random substream. The k-th draw is a pure function of
/// (seed, domain, trial, user, k), so any worker can reproduce any trial
/// without touching shared state.
class Substream {
 public:
  Substream(std::uint64_t seed, StreamDomain domain, std::uint64_t trial, std::uint64_t user);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double exponential();
  double normal();
  /// Gamma(shape, 1).
  double gamma(double shape);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace obf

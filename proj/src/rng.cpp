#include "obf/rng.hpp"

#include <cmath>
#include <numbers>

namespace obf {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Substream::Substream(std::uint64_t seed, StreamDomain domain, std::uint64_t trial,
                     std::uint64_t user) {
  std::uint64_t k = mix64(seed ^ 0x243f6a8885a308d3ULL);
  k = mix64(k ^ mix64(static_cast<std::uint64_t>(domain) + 0x13198a2e03707344ULL));
  k = mix64(k ^ mix64(trial + 0xa4093822299f31d0ULL));
  k = mix64(k ^ mix64(user + 0x082efa98ec4e6c89ULL));
  key_ = k;
}

std::uint64_t Substream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double Substream::uniform() {
  // 53 random bits shifted off zero
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Substream::exponential() { return -std::log(uniform()); }

double Substream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double r = std::sqrt(-2.0 * std::log(uniform()));
  const double theta = 2.0 * std::numbers::pi * uniform();
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Substream::gamma(double shape) {
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  // Marsaglia-Tsang
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace obf

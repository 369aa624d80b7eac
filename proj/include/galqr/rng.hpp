#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "galqr/math.hpp"

namespace galqr {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// xoshiro256++ generator. A stream is fully determined by (seed, stream),
/// so any (seed, stream) pair reproduces the same sequence on every platform.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}

  RngStream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {
    std::uint64_t sm = seed ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL);
    for (auto& s : state_) s = detail::splitmix64(sm);
    // avoid the (measure-zero) all-zero state
    bool all_zero = true;
    for (auto s : state_) all_zero = all_zero && s == 0;
    if (all_zero) state_[0] = 1;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Independent child stream derived deterministically from this stream's identity.
  RngStream split(std::uint64_t child) const {
    std::uint64_t mix = stream_;
    mix = detail::splitmix64(mix) ^ (child * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
    return RngStream(seed_, mix);
  }

  std::uint64_t next_u64() {
    std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on the open interval (0,1).
  double uniform() {
    while (true) {
      double u = (next_u64() >> 11) * 0x1.0p-53;
      if (u > 0.0 && u < 1.0) return u;
    }
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via inverse-CDF; one uniform per variate keeps streams
  /// reproducible under thinning or interleaving.
  double normal() { return normal_quantile(uniform()); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Exponential with unit rate.
  double exponential() { return -std::log1p(-uniform()); }

  double exponential(double rate) { return exponential() / rate; }

  /// Gamma(shape, rate) by Marsaglia-Tsang squeeze; shape<1 boosted via the
  /// u^(1/shape) identity.
  double gamma(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0))
      throw std::invalid_argument("gamma: shape and rate must be positive");
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v / rate;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double chi_square(double df) { return gamma(0.5 * df, 0.5); }

  double beta(double a, double b) {
    double x = gamma(a, 1.0);
    double y = gamma(b, 1.0);
    return x / (x + y);
  }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    while (true) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace galqr

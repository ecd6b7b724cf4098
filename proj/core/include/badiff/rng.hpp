#pragma once
#include <cstdint>
#include <cmath>

namespace badiff {

// Counter-based deterministic random stream. Every draw is a pure function
// of (seed, counter), so state serializes to two integers and draws are
// reproducible independent of batching or threading. Gaussians are produced
// by Box-Muller and always consume exactly two counter increments.
class RngStream {
 public:
  RngStream() : seed_(0), counter_(0) {}
  explicit RngStream(uint64_t seed, uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

  // Derive an independent stream (seed mixing, fresh counter).
  RngStream fork(uint64_t stream_id) const {
    return RngStream(mix(seed_ ^ mix(stream_id + 0x632be59bd9b4e019ULL)), 0);
  }

  uint64_t next_u64() { return mix(seed_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n)
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (cosine branch only; two draws consumed).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static constexpr double kPi = 3.14159265358979323846;

  static uint64_t mix(uint64_t z) {
    // splitmix64 finalizer
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace badiff

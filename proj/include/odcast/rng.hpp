#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace odcast {

/// Deterministic random source. All draws are derived from the raw
/// mt19937_64 stream with explicit arithmetic, so identical seeds give
/// identical sequences on every platform; std::*_distribution is avoided
/// because its output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  uint64_t bounded(uint64_t n) {
    // rejection sampling over the largest multiple of n
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  /// Standard normal via Box-Muller (one value per call; the pair's second
  /// half is discarded to keep the stream position simple).
  double normal() {
    double u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Poisson count by Knuth's product method; adequate for the moderate
  /// rates used in synthetic demand fixtures.
  uint64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    const double l = std::exp(-lambda);
    uint64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > l);
    return k - 1;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (size_t i = items.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(bounded(i + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace odcast

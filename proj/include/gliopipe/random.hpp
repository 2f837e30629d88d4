#pragma once

#include <cstdint>

namespace gliopipe {

/// Counter-based pseudorandom stream.
///
/// The stream state is the pair (key, counter); draw i is the SplitMix64
/// finalizer applied to key + (i + 1) * golden_gamma. Conversions to real
/// and normal variates are implemented here rather than through <random>
/// distributions so that results are identical across standard libraries.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key = 0) : key_(key) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal variate (Box-Muller, both outputs used).
  double normal();
  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Folds a sequence of 64-bit words into one stream key.
std::uint64_t mix_key(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_key(std::uint64_t a, std::uint64_t b, std::uint64_t c);

/// Per-sample augmentation stream, keyed on (master_seed, epoch, sample_index).
RandomStream stream_for(std::uint64_t master_seed, std::uint64_t epoch, std::uint64_t sample_index);

}  // namespace gliopipe

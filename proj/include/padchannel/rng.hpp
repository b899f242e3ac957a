#pragma once

#include <array>
#include <cstdint>

namespace padchannel {

/// xoshiro256** seeded through SplitMix64.
///
/// Only integer arithmetic is used to produce the raw stream, so a seed maps
/// to the same sequence on every platform. `fork` derives an independent
/// child stream from the current state plus a stream id, which is how one
/// training seed fans out into init / shuffle / augmentation / dropout
/// streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound). Lemire's method with rejection.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller; caches the second variate.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  Rng fork(std::uint64_t stream_id);

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace padchannel

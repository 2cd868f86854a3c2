#pragma once

#include <cstdint>
#include <random>

namespace hvi {

/// A seeded random stream. Streams are derived from (seed, index) pairs so
/// replicate r of a study always sees the same draws regardless of how many
/// other replicates ran before it.
///
/// Consumption contract (per scalar draw): uniform = 1 engine word,
/// normal = 2 uniforms (Box-Muller, no caching).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  /// Child stream keyed on this stream's key and `index`; does not advance this stream.
  RngStream split(std::uint64_t index) const;

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform();
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  std::uint64_t key() const { return key_; }

 private:
  struct FromKey {};
  RngStream(FromKey, std::uint64_t key);

  std::uint64_t key_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to mix (seed, index) pairs into stream keys.
std::uint64_t mix64(std::uint64_t x);

}  // namespace hvi

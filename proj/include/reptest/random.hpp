#pragma once

// Random streams for the testers and the experiment harness.
//
// Every stream is a xoshiro256** engine whose state is derived from a
// 64-bit key by SplitMix64. Keys for trial streams are a keyed hash of
// (master seed, stream role, indices), so the stream handed to trial i
// never depends on which worker runs it or in which order.

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace reptest {

/// Seed used by the command-line tools unless one is given.
inline constexpr std::uint64_t kDefaultSeed = 20260101;

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  std::uint64_t s = x;
  return splitmix64(s);
}

/// Stream roles. Distinct roles give unrelated streams for the same indices.
enum class StreamRole : std::uint64_t {
  internal = 0x1a7e5a11ULL,
  sample = 0x5a3b1e00ULL,
  prior = 0x9a10a000ULL,
  calibration = 0xca11b000ULL,
};

/// Counter-based key: a pure function of the master seed, the role and the
/// index tuple.
inline constexpr std::uint64_t derive_key(std::uint64_t master, StreamRole role,
                                          std::initializer_list<std::uint64_t> indices) noexcept {
  std::uint64_t h = mix64(master ^ 0x6a09e667f3bcc908ULL);
  h = mix64(h ^ static_cast<std::uint64_t>(role));
  std::uint64_t position = 1;
  for (std::uint64_t idx : indices) {
    h = mix64(h ^ mix64(idx + 0x3c6ef372fe94f82bULL * position));
    ++position;
  }
  return h;
}

/// xoshiro256** satisfying UniformRandomBitGenerator. Copying an engine
/// clones its stream state; the paired-run protocol relies on that.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, bound), bound > 0 (Lemire's multiply-shift with rejection).
  std::uint64_t below(std::uint64_t bound) noexcept {
    unsigned __int128 product = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(product);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        product = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(product);
      }
    }
    return static_cast<std::uint64_t>(product >> 64);
  }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

/// The algorithm's internal coins and the stream that drives sampling.
/// Replaying `internal` with a fresh `sample` is the two-run experiment.
struct SeedSplit {
  Rng internal;
  Rng sample;

  static SeedSplit from_seeds(std::uint64_t internal_seed, std::uint64_t sample_seed) {
    return SeedSplit{Rng{internal_seed}, Rng{sample_seed}};
  }

  /// Independent internal/sample streams derived from a single seed.
  static SeedSplit from_master(std::uint64_t master) {
    return from_seeds(derive_key(master, StreamRole::internal, {}),
                      derive_key(master, StreamRole::sample, {}));
  }
};

}  // namespace reptest

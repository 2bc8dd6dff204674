#pragma once

// Counter-based random streams.
//
// A stream is addressed by (key, index, domain). Draws for time index t never
// depend on draws for any other index, so extending a path backwards or adding
// replicas leaves every existing value untouched.

#include <array>
#include <cstdint>
#include <limits>

namespace odre {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Child seed for replica/sub-task `index`: splitmix64(seed XOR splitmix64(index + c)).
inline constexpr std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Philox4x32-10 block function.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter encrypt(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += 0x9E3779B9U;
      key[1] += 0xBB67AE85U;
    }
    return ctr;
  }

 private:
  static constexpr Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = std::uint64_t{0xD2511F53U} * c[0];
    const std::uint64_t p1 = std::uint64_t{0xCD9E8D57U} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Which consumer a stream belongs to; keeps unrelated draws for the same
/// (key, index) independent.
enum class Domain : std::uint32_t {
  CovariateNoise = 1,
  CovariateInit = 2,
  Observation = 3,
  Coupling = 4,
  MonteCarlo = 5,
  Bootstrap = 6,
  Grid = 7,
  Push = 8,
};

/// UniformRandomBitGenerator over one (key, index, domain) address.
/// Supplies 2^32 blocks of 128 bits.
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr Stream(std::uint64_t key, std::int64_t index, Domain domain)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        index_(static_cast<std::uint64_t>(index)),
        domain_(static_cast<std::uint32_t>(domain)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (have_ == 0) refill();
    --have_;
    return buffer_[have_];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1); safe for inverse-CDF transforms.
  double uniform_open() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

 private:
  void refill() {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32),
                                  block_, domain_};
    const auto out = Philox4x32::encrypt(ctr, key_);
    ++block_;
    buffer_[1] = (std::uint64_t{out[0]} << 32) | out[1];
    buffer_[0] = (std::uint64_t{out[2]} << 32) | out[3];
    have_ = 2;
  }

  Philox4x32::Key key_;
  std::uint64_t index_;
  std::uint32_t domain_;
  std::uint32_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int have_ = 0;
};

}  // namespace odre

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

#include <boost/random/exponential_distribution.hpp>

namespace ccmeta {

/// splitmix64 finalizer; decorrelates (root, stream) pairs before seeding.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// xoshiro256++ (Blackman and Vigna). The simulator's inner loop is bound by
/// generator throughput, and std::mt19937_64 is several times slower.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed = 0) {
    std::uint64_t x = seed;
    for (auto& w : s_) {
      w = mix64(x);
      x += 0x9e3779b97f4a7c15ULL;
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t out = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return out;
  }

  bool operator==(const Xoshiro256pp& o) const { return s_ == o.s_; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
};

using Rng = Xoshiro256pp;

/// Independent generator for task `stream` under `root`. Substreams depend only
/// on the pair, so results do not depend on how tasks are spread over workers.
inline Rng make_stream(std::uint64_t root, std::uint64_t stream) {
  return Rng(mix64(mix64(root) ^ (stream * 0xd1b54a32d192ed03ULL + 0x5851f42d4c957f2dULL)));
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unit-mean exponential (Rayleigh power fading), Boost's ziggurat sampler.
inline double unit_exponential(Rng& rng) {
  static thread_local boost::random::exponential_distribution<double> dist(1.0);
  return dist(rng);
}

}  // namespace ccmeta

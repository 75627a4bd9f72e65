#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cpcure {

// splitmix64 finalizer; used to derive stream keys.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s);

// Stream purpose keys: distinct consumers of the same (seed, subject,
// iteration) coordinates must never share a stream, so each mixes its own
// purpose constant into the final key.
namespace stream_purpose {
inline constexpr std::uint64_t kEStep = 0x65737403;
inline constexpr std::uint64_t kMonitor = 0x6d6f6e01;
inline constexpr std::uint64_t kInit = 0x696e6902;
inline constexpr std::uint64_t kSimulate = 0x73696d04;
inline constexpr std::uint64_t kBootstrap = 0x626f6f05;
inline constexpr std::uint64_t kTrajectory = 0x74726a06;
}  // namespace stream_purpose

// Deterministic random source. mt19937_64 supplies the raw stream (its output
// is pinned by the standard); all variate transforms live here instead of
// std:: distributions, whose algorithms are implementation-defined and would
// break replay guarantees across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Derives an independent stream from (seed, k1, k2, k3). Every subject,
  // bootstrap replicate, and EM iteration gets its own stream so that output
  // does not depend on thread count or evaluation order.
  static Rng stream(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2 = 0,
                    std::uint64_t k3 = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ k1);
    h = mix64(h ^ k2);
    h = mix64(h ^ k3);
    return Rng(h);
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform strictly inside (0, 1); safe to feed into log() or a quantile.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  double normal();  // N(0,1) via inverse CDF, defined in rng.cpp

  double exponential(double rate);

  // Uniform on {0, ..., n-1} via 128-bit multiply (deterministic, no loop).
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cpcure

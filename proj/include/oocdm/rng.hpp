#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace oocdm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ stream);
}

inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG with explicitly implemented samplers so results do not
// depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Rng(mix_seed(seed, stream_id));
  }
  static Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t k = 0) {
    return Rng(mix_seed(seed, hash_str(tag) + 0x9e3779b97f4a7c15ULL * k));
  }

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call, no cached state
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace oocdm

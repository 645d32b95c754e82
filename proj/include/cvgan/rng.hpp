#pragma once

#include "cvgan/common.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace cvgan::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derive a named child seed from a master seed. Sub-streams ("init",
/// "shuffle", "noise", ...) keep RNG consumption independent between
/// concerns, so adding draws to one stream never shifts another.
inline std::uint64_t derive(std::uint64_t seed, const std::string& tag) {
  return splitmix64(seed ^ fnv1a(tag));
}

inline std::uint64_t derive(std::uint64_t seed, const std::string& tag, std::uint64_t index) {
  return splitmix64(derive(seed, tag) ^ splitmix64(index * 0x9e3779b97f4a7c15ull + 1));
}

/// Stateful stream for shuffles, dropout masks and parameter init.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Counter-based standard-normal stream: normal(i) depends only on
/// (key, i). Rollouts draw their per-step noise from this so a prefix of a
/// run is bitwise reproducible regardless of how far the run continued.
class CounterNormal {
 public:
  explicit CounterNormal(std::uint64_t key) : key_(key) {}

  double operator()(std::uint64_t counter) const {
    const std::uint64_t a = splitmix64(key_ ^ splitmix64(2 * counter + 1));
    const std::uint64_t b = splitmix64(key_ ^ splitmix64(2 * counter + 2));
    // Box-Muller; u1 in (0,1], u2 in [0,1).
    const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Vector of draws for logical step `step`; coordinates use disjoint counters.
  Vector draw(std::uint64_t step, int dim) const {
    Vector out(dim);
    for (int i = 0; i < dim; ++i) out[i] = (*this)(step * 0x10000ull + static_cast<std::uint64_t>(i));
    return out;
  }

 private:
  std::uint64_t key_;
};

}  // namespace cvgan::rng

#pragma once

// Seed derivation and the random streams used by the simulator and trainers.
//
// Every random quantity in the toolkit is drawn from a stream whose seed is
// derived from a parent seed plus (index, tag) through derive_seed(). Streams
// never share an engine, so generation order and parallelism cannot change a
// result.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The std:: distributions are not (libstdc++ and libc++ differ), so
// the value transforms below are written out explicitly.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>

namespace xfire {

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Named sub-streams. Values are part of the on-disk reproducibility contract.
enum class Stream : std::uint64_t {
  profiles = 0x01,
  instance = 0x02,
  attacked_set = 0x03,
  background = 0x04,
  bots = 0x05,
  ramp = 0x06,
  split = 0x07,
  init = 0x08,
  shuffle = 0x09,
  forest = 0x0A,
};

/// derive_seed(parent, index, tag) =
///   splitmix64(splitmix64(splitmix64(parent) ^ index) ^ (tag * golden))
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index,
                                    Stream tag) noexcept {
  const auto t = static_cast<std::uint64_t>(tag) * 0x9E3779B97F4A7C15ULL;
  return splitmix64(splitmix64(splitmix64(parent) ^ index) ^ t);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [lo, hi], rejection-sampled (no modulo bias).
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
    const std::uint64_t span = hi - lo;
    if (span == ~std::uint64_t{0}) return engine_();
    const std::uint64_t range = span + 1;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return lo + r % range;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, i - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace xfire

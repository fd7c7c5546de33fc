#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace metcc {

// splitmix64 finalizer; used to expand one root seed into independent streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed for (component, index) under a root seed. Components are small integer ids
// (see SeedComponent); index is usually a fold number.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t component,
                                    std::uint64_t index = 0) noexcept {
  return mix_seed(mix_seed(mix_seed(root) ^ (component * 0xD1B54A32D192ED03ULL)) ^ index);
}

enum class SeedComponent : std::uint64_t {
  kFolds = 1,
  kHoldout = 2,
  kMetcc = 3,
  kSearch = 4,
  kGenerator = 5,
};

constexpr std::uint64_t derive_seed(std::uint64_t root, SeedComponent component,
                                    std::uint64_t index = 0) noexcept {
  return derive_seed(root, static_cast<std::uint64_t>(component), index);
}

// Portable random source. The standard distributions are implementation-defined,
// so every draw here is built directly from mt19937_64 output bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % n);
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace metcc

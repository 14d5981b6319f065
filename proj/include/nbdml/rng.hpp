#pragma once

// Counter-based random numbers.
//
// Every draw is a pure function of (key, stream, unit, draw index), so a
// unit's draws do not move when n or the visiting order changes. The mixing
// function is the SplitMix64 finalizer, a bijection on 64-bit words.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace nbdml::rng {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn stream names into tags at compile time.
constexpr std::uint64_t tag(std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Injective in `index` for a fixed `key`.
constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t index) noexcept {
  return mix64(mix64(key) + index * kGolden);
}

constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t a,
                               std::uint64_t b) noexcept {
  return derive(derive(key, a), b);
}

constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t a, std::uint64_t b,
                               std::uint64_t c) noexcept {
  return derive(derive(derive(key, a), b), c);
}

inline double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Uniform on [0,1) for the given coordinates.
inline double uniform(std::uint64_t key, std::uint64_t stream, std::uint64_t unit,
                      std::uint64_t draw = 0) noexcept {
  return to_unit(derive(key, stream, unit, draw));
}

// Sequential view of one substream; satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t key, std::uint64_t stream) noexcept
      : base_(derive(key, stream)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept { return mix64(base_ + (++counter_) * kGolden); }

  double uniform() noexcept { return to_unit((*this)()); }

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(bound)) %
           (bound == 0 ? 1 : bound);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

}  // namespace nbdml::rng

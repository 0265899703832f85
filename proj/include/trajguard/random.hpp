#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace trajguard {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ splitmix64(value));
}

inline constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stateless seeded random source: every draw is a pure function of
/// (seed, key), so callers that derive keys from their inputs stay pure.
class SeededRandom {
 public:
  explicit constexpr SeededRandom(std::uint64_t seed = 0) : seed_(seed) {}

  constexpr std::uint64_t seed() const { return seed_; }

  constexpr std::uint64_t bits(std::uint64_t key) const { return hash_combine(seed_, key); }

  std::uint64_t bits(std::string_view label, std::uint64_t key) const {
    return hash_combine(hash_combine(seed_, hash_string(label)), key);
  }

  /// Uniform in [0, 1).
  double uniform(std::string_view label, std::uint64_t key) const {
    return static_cast<double>(bits(label, key) >> 11) * 0x1.0p-53;
  }

  SeededRandom derive(std::uint64_t key) const { return SeededRandom(bits(key)); }

 private:
  std::uint64_t seed_;
};

/// Sequential generator for test data and population shuffles; portable
/// across standard libraries (unlike std::uniform_int_distribution).
class SplitMixStream {
 public:
  explicit SplitMixStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    return splitmix64(state_++);
  }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) { return bound == 0 ? 0 : next() % bound; }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace trajguard

#pragma once
// Seeded random streams. A run owns one root seed; every component forks its
// own named stream so adding draws in one component never perturbs another.

#include <cstdint>
#include <random>
#include <string_view>

#include "cig/tensor.hpp"

namespace cig {

class SeedStream {
 public:
  explicit SeedStream(uint64_t seed) : seed_(seed) {}

  uint64_t seed() const { return seed_; }

  // Child stream with an independent label-derived seed.
  SeedStream fork_stream(std::string_view name) const {
    return SeedStream(child_seed(name));
  }

  std::mt19937_64 fork(std::string_view name) const {
    std::mt19937_64 eng(child_seed(name));
    eng.discard(16);  // move past the low-entropy warmup states
    return eng;
  }

 private:
  uint64_t child_seed(std::string_view name) const {
    uint64_t h = fnv1a64(name.data(), name.size());
    // splitmix-style scramble of (seed, label hash)
    uint64_t z = seed_ + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t seed_;
};

inline double uniform_real(std::mt19937_64& eng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(eng);
}

inline double normal(std::mt19937_64& eng, double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> d(mean, stddev);
  return d(eng);
}

inline long long uniform_int(std::mt19937_64& eng, long long lo, long long hi) {
  std::uniform_int_distribution<long long> d(lo, hi);
  return d(eng);
}

// Fisher-Yates with an explicit draw sequence; std::shuffle's consumption
// pattern is implementation-defined, this one is pinned.
template <typename T>
void shuffle_vector(std::vector<T>& v, std::mt19937_64& eng) {
  for (size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<size_t> d(0, i - 1);
    std::swap(v[i - 1], v[d(eng)]);
  }
}

}  // namespace cig

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "istr/errors.hpp"

namespace istr {

// Deterministic random source. The engine is std::mt19937_64, whose output
// stream is bit-exact across platforms per the C++ standard; every
// distribution transform is written out here instead of using <random>
// distribution classes, whose output is implementation-defined. Same seed,
// same stream, on any compiler.
class Rng {
public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double();
  float next_float() { return static_cast<float>(next_double()); }

  // Uniform integer in [lo, hi], both inclusive. Unbiased (rejection).
  int uniform_int(int lo, int hi);

  // Gaussian via Box-Muller; one spare value is cached between calls.
  float normal(float mean, float stddev);

  // Fisher-Yates with explicit bounded draws.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      int j = uniform_int(0, static_cast<int>(i) - 1);
      std::swap(v[i - 1], v[static_cast<size_t>(j)]);
    }
  }

  // k distinct values from {0, ..., n-1}, order randomized.
  std::vector<int> sample_without_replacement(int n, int k);

  // Derive an independent child stream; `salt` distinguishes siblings.
  Rng fork(uint64_t salt);

private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace istr

#include "istr/rng.hpp"

#include <cmath>

namespace istr {

double Rng::next_double() {
  // Top 53 bits -> [0, 1).
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int lo, int hi) {
  if (lo > hi) throw ArgumentError("uniform_int: lo > hi");
  uint64_t range = static_cast<uint64_t>(static_cast<int64_t>(hi) -
                                         static_cast<int64_t>(lo)) + 1;
  if (range == 0) {  // full 64-bit span
    return static_cast<int>(gen_());
  }
  uint64_t limit = UINT64_MAX / range * range;
  uint64_t r;
  do {
    r = gen_();
  } while (r >= limit);
  return static_cast<int>(static_cast<int64_t>(lo) +
                          static_cast<int64_t>(r % range));
}

float Rng::normal(float mean, float stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1, u2;
  do {
    u1 = next_double();
  } while (u1 <= 0.0);
  u2 = next_double();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * 3.14159265358979323846 * u2;
  spare_ = static_cast<float>(radius * std::sin(angle));
  has_spare_ = true;
  return mean + stddev * static_cast<float>(radius * std::cos(angle));
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (n < 0 || k < 0) throw ArgumentError("sample_without_replacement: negative size");
  if (k > n) throw ArgumentError("sample_without_replacement: k > n");
  std::vector<int> pool(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  // Partial Fisher-Yates: after k swaps the first k slots are the sample.
  for (int i = 0; i < k; ++i) {
    int j = uniform_int(i, n - 1);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(k));
  return pool;
}

Rng Rng::fork(uint64_t salt) {
  // splitmix64 over (fresh draw ^ salt) decorrelates child streams.
  uint64_t z = next_u64() ^ (salt + 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z = z ^ (z >> 31);
  return Rng(z);
}

}  // namespace istr

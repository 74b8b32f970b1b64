#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace migc {

// Deterministic RNG with explicit, platform-independent algorithms.
// splitmix64 core; normals via Box-Muller; shuffles via Fisher-Yates.
// libstdc++ distributions are implementation-defined, so they are not used
// anywhere results must reproduce bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n): rejection-free modulo is fine at our scales, but use
  // Lemire-style bounded draw to keep the distribution exact.
  uint64_t below(uint64_t n);

  int range_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Standard normal via Box-Muller (caches the second value).
  double normal();

  void fill_normal(std::vector<double>& out) {
    for (auto& x : out) x = normal();
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream identified by a purpose label and an index.
  // Reproducible regardless of draw order on the parent.
  Rng fork(const std::string& purpose, uint64_t index = 0) const;

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace migc

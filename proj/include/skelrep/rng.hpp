#pragma once

// Deterministic random streams. All randomness in the project flows through
// these helpers so that runs are bit-reproducible given a seed. The raw
// engine is std::mt19937_64 (fully specified by the standard); the
// distributions are implemented here because the std:: distribution objects
// are implementation-defined and would break cross-compiler reproducibility.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace skelrep {

// FNV-1a, used to derive independent substreams from (seed, purpose tags).
inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// splitmix64 finalizer; whitens the combined (seed, tag, index) key.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent substream for a named purpose and index, e.g. the shuffle of
  // epoch 7 or the weight init of one parameter. Streams depend only on
  // (seed, tag, index), never on call order, which is what makes
  // checkpoint/resume reproducible without persisting engine state.
  static Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    return Rng(mix64(seed ^ mix64(hash_tag(tag)) ^ mix64(index * 0x9e3779b97f4a7c15ull + 1)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1); 53-bit mantissa construction, fully specified.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method; avoids the implementation-defined
  // std::normal_distribution.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double k = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * k;
    have_spare_ = true;
    return u * k;
  }

  // Uniform integer in [0, n); rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Fisher-Yates.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace skelrep

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace sumrl {

// All randomness in the project flows through this wrapper. std::mt19937_64
// is seeded directly and floats are derived by explicit bit manipulation, so
// the same seed gives the same stream on every platform (the std
// distributions make no such guarantee).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1), 53 bits of precision
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform index in [0, n); n must be > 0
  size_t below(size_t n) {
    size_t r = static_cast<size_t>(uniform() * static_cast<double>(n));
    return r < n ? r : n - 1;
  }

  // inclusive integer range
  int range(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<size_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // inverse-CDF draw from an (approximately normalized) distribution
  size_t categorical(std::span<const double> probs) {
    double u = uniform();
    double cum = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
      cum += probs[i];
      if (u < cum) return i;
    }
    return probs.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

inline uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Combines a user seed with a stream tag (epoch number, phase id, ...) into
// an independent-looking seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace sumrl

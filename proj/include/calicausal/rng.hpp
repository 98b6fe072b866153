#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace calicausal {

// splitmix64 step (Vigna). Used both as the core generator and for seed mixing.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Derives an independent stream seed from a root seed and a stream name.
// All randomness in the project flows from one root seed through these.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t s = root ^ fnv1a64(stream);
  splitmix64_next(s);
  splitmix64_next(s);
  return s;
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                 std::uint64_t index) {
  std::uint64_t s = derive_seed(root, stream) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  splitmix64_next(s);
  return s;
}

// Deterministic RNG with explicitly-coded distributions so output is stable
// across standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Uniform integer in [0, n). Lemire multiply-shift; bias is negligible for
  // the n used here (< 2^32).
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
  }

  // Standard normal via Box-Muller with cached spare.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double lognormal(double mu, double sigma) { return sigma == 0.0 ? ex(mu) : ex(mu + sigma * normal()); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Draws k distinct indices from [0, n), in selection order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  static double ex(double x);

  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace calicausal

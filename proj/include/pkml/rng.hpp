#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace pkml {

// FNV-1a 64-bit hash. Used for seed derivation and artifact checksums.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// splitmix64, used to expand a user seed into generator state.
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives an independent per-module seed from the global one. Mixing the
// module name hash guarantees that adding a module never perturbs another
// module's random stream.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stream_name) {
  std::uint64_t x = global_seed ^ fnv1a64(stream_name);
  return splitmix64(x);
}

// xoshiro256++ (Blackman & Vigna). Platform-independent and seedable, which is
// what the reproducibility contract needs; std::mt19937 distributions are not
// portable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
    have_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Bounded draw in [0, n). The modulo bias is ~n/2^64 and irrelevant here;
  // portability matters more.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (the cached spare is part of the state).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Log-normal parameterized by median and coefficient of variation:
  // sigma^2 = ln(1 + cv^2), median = exp(mu).
  double lognormal_median_cv(double median, double cv) {
    if (cv <= 0.0) return median;
    const double sigma = std::sqrt(std::log1p(cv * cv));
    return median * std::exp(sigma * normal());
  }

  // Deterministic Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Child generator for an independent substream (e.g. one per drug).
  Rng child(std::uint64_t key) const {
    std::uint64_t x = state_[0] ^ (key + 0x9e3779b97f4a7c15ull);
    return Rng(splitmix64(x));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
  bool have_spare_;
  double spare_;
};

}  // namespace pkml

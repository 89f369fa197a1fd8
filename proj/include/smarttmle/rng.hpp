#pragma once

#include "smarttmle/types.hpp"

#include <cstdint>
#include <random>

namespace smarttmle {

// splitmix64; used to derive independent substream seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix_seed(master ^ mix_seed(stream + 0x51337ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(master, a), b);
}

// Thin sampler over mt19937_64. The std:: distributions are
// implementation-defined, so the handful of variates we need are generated
// explicitly to keep seeded runs reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Scalar uniform01() {
    // 53-bit mantissa draw in [0,1).
    return static_cast<Scalar>(engine_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(Scalar p) { return uniform01() < p; }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(engine_() % span);
  }

  // Inversion by sequential search; fine for the small rates used here.
  int poisson(Scalar lambda) {
    if (lambda <= 0.0) return 0;
    Scalar u = uniform01();
    Scalar p = std::exp(-lambda);
    Scalar cdf = p;
    int k = 0;
    const int cap = static_cast<int>(lambda + 40.0 * std::sqrt(lambda) + 100.0);
    while (u > cdf && k < cap) {
      ++k;
      p *= lambda / static_cast<Scalar>(k);
      cdf += p;
    }
    return k;
  }

  Scalar normal() {
    // Box-Muller, one variate per call pair; cache the second.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    Scalar u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const Scalar u2 = uniform01();
    const Scalar r = std::sqrt(-2.0 * std::log(u1));
    const Scalar theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  Scalar spare_ = 0.0;
};

}  // namespace smarttmle

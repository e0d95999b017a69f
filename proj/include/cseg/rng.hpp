#pragma once
// Deterministic random number generation.
//
// Generator: xoshiro256** with 256-bit state, seeded from a 64-bit seed via
// the splitmix64 scrambler.  Subsystems never share a generator: each one
// derives its own stream from the master seed with a textual tag
// ("init/...", "shuffle/...", "dropout/...", "noise/...", "datagen/..."),
// so adding draws in one place can never shift the sequence seen elsewhere.
//
// All distributions are built from raw 64-bit outputs (no <random>
// machinery), so a given seed yields the same stream on every platform.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>

namespace cseg {

inline uint64_t splitmix64_next(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// FNV-1a, used only to turn stream tags into seed perturbations.
inline uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Rng {
 public:
  Rng() : Rng(0) {}

  explicit Rng(uint64_t seed) : seed_(seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64_next(x);
  }

  // Independent child stream.  Derivation uses the seed this Rng was
  // constructed with (not its current state), so the set of streams hanging
  // off one master seed is fixed no matter how much any of them is consumed.
  Rng stream(std::string_view tag) const {
    uint64_t x = seed_ ^ hash_tag(tag);
    return Rng(splitmix64_next(x));
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform double in [0,1) with 53 significant bits
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; the pair's second value is cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // integer in [0,n); n > 0.  Fixed-point multiply keeps it platform-stable.
  uint64_t bounded(uint64_t n) {
    return uint64_t((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <class It>
  void shuffle(It first, It last) {  // Fisher-Yates
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      const auto j = static_cast<decltype(i)>(bounded(uint64_t(i) + 1));
      std::swap(first[i], first[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  uint64_t seed_;
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cseg

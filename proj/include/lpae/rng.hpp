#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace lpae {

// PCG32 (Melissa O'Neill's minimal variant). Chosen over std::mt19937 because
// the whole state is two u64 words, which serializes into checkpoints and
// reproduces bit-identically across platforms.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t seq = 0xda3e39cb94b95bdbull) {
    state_ = 0u;
    inc_ = (seq << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  // Unbiased integer in [0, bound).
  std::uint32_t next_below(std::uint32_t bound) {
    std::uint32_t threshold = -bound % bound;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform in [0, 1).
  double next_double() { return next_u32() * (1.0 / 4294967296.0); }

  // Standard normal via Box-Muller; the second value of each pair is
  // discarded so the generator stays a pure function of (state, inc).
  double normal() {
    double u1 = (next_u32() + 1.0) * (1.0 / 4294967296.0);  // (0, 1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_below(static_cast<std::uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::pair<std::uint64_t, std::uint64_t> state() const { return {state_, inc_}; }
  void restore(std::uint64_t state, std::uint64_t inc) {
    state_ = state;
    inc_ = inc;
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

// SplitMix64 step, used to derive independent stream seeds (e.g. one
// shuffle stream per epoch) from a base seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace lpae

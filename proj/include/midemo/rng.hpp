#pragma once

#include <cstdint>
#include <vector>

namespace midemo {

// PCG-XSH-RR 32-bit generator (O'Neill's pcg32). Chosen over std::mt19937
// because the output sequence is fixed by the algorithm itself, so seeds,
// splits and initializations reproduce across platforms and standard
// libraries. Recorded in output metadata as "pcg32".
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) {
    state_ = 0u;
    inc_ = (stream << 1u) | 1u;
    next();
    state_ += seed;
    next();
  }

  std::uint32_t next() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  // Unbiased draw in [0, bound) by rejection.
  std::uint32_t bounded(std::uint32_t bound) {
    if (bound < 2) return 0;
    std::uint32_t threshold = (-bound) % bound;
    for (;;) {
      std::uint32_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  std::uint64_t next_u64() {
    return (static_cast<std::uint64_t>(next()) << 32) | next();
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

// In-place Fisher-Yates shuffle with pcg32 draws; deterministic given rng state.
template <typename T>
void shuffle(std::vector<T>& items, Pcg32& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.bounded(static_cast<std::uint32_t>(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace midemo

#pragma once

#include <cmath>
#include <cstdint>

namespace fastwam {

// SplitMix64 mixing step, used to derive substream seeds.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// PCG-XSH-RR 64/32 (O'Neill). Fixed algorithm identity so datasets and
// training runs are reproducible across implementations; `seq` selects
// an independent stream.
class Pcg32 {
 public:
  Pcg32() : Pcg32(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL) {}

  Pcg32(uint64_t seed, uint64_t seq) {
    state_ = 0u;
    inc_ = (seq << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    uint64_t lo = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform double in [0,1), 53 random bits.
  double next_double01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double01(); }

  // Standard normal via Box-Muller (basic form, cached second value).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - next_double01();  // (0,1], keeps log finite
    double u2 = next_double01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  uint64_t state() const { return state_; }
  uint64_t inc() const { return inc_; }
  bool has_spare() const { return has_spare_; }
  double spare() const { return spare_; }

  // Restores the full generator state (checkpoint resume).
  void restore(uint64_t state, uint64_t inc, bool has_spare, double spare) {
    state_ = state;
    inc_ = inc;
    has_spare_ = has_spare;
    spare_ = spare;
  }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fastwam

#pragma once

#include <cstdint>
#include <random>

namespace retflow {

// Stream offsets from the master seed. Every consumer of randomness draws
// from its own stream so that adding draws in one place never shifts another.
inline constexpr std::uint64_t kWorldStream = 0;    // world init (users, items)
inline constexpr std::uint64_t kInitStream = 1;     // parameter init
inline constexpr std::uint64_t kSampleStream = 2;   // buffer / population sampling
inline constexpr std::uint64_t kRolloutStream = 100;  // rollout actor i uses 100 + i

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; two uniforms per draw, no cached spare,
  // so the stream position is independent of call history.
  double normal();

  // Uniform index in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

 private:
  std::mt19937_64 gen_;
};

inline RngStream make_stream(std::uint64_t master_seed, std::uint64_t offset) {
  return RngStream(master_seed + offset);
}

}  // namespace retflow

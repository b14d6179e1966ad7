#pragma once

#include <cstdint>

namespace dgfn {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic, platform-independent random stream. Standard-library
/// distributions are avoided on purpose: their output is not pinned by the
/// standard, and run outputs must be byte-identical across rebuilds.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {
    // Decorrelate nearby seeds.
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t state_;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Stream purposes, kept distinct so consumers never share a sequence.
inline constexpr std::uint64_t kParamInitTag = 0x70617261'6d696e69ULL;
inline constexpr std::uint64_t kTrajectoryTag = 0x7472616a'65637430ULL;

/// Stream feeding the decisions of one trajectory within one training step.
/// Keyed by (run seed, step index, trajectory index) so a batch can be
/// sampled in any order, or in parallel, with identical results.
inline RngStream trajectory_stream(std::uint64_t run_seed, std::int64_t step,
                                   int trajectory_index) {
  std::uint64_t s = mix_seed(run_seed, kTrajectoryTag);
  s = mix_seed(s, static_cast<std::uint64_t>(step));
  s = mix_seed(s, static_cast<std::uint64_t>(trajectory_index));
  return RngStream(s);
}

inline RngStream param_init_stream(std::uint64_t run_seed) {
  return RngStream(mix_seed(run_seed, kParamInitTag));
}

}  // namespace dgfn

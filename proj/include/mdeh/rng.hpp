#pragma once

#include <cstdint>
#include <initializer_list>

namespace mdeh {

/// Deterministic splittable RNG (splitmix64 core). Every randomized stage of
/// the pipeline derives its own stream from (seed, stream tag, draw index),
/// so replaying a draw index yields the same values regardless of evaluation
/// order or thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derive an independent stream by hashing the tags into the seed.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  float next_float();
  double next_double();
  float uniform(float lo, float hi);
  double uniform_d(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  float normal();

 private:
  std::uint64_t state_;
};

// Stream tags; values are arbitrary but frozen for reproducibility.
namespace rng_stream {
constexpr std::uint64_t kScene = 0x5ce9e01;
constexpr std::uint64_t kPlacement = 0x91ac3d2;
constexpr std::uint64_t kAttack = 0xa77ac4;
constexpr std::uint64_t kInit = 0x1417;
constexpr std::uint64_t kTrain = 0x7a199;
constexpr std::uint64_t kAugment = 0xa06;
constexpr std::uint64_t kEval = 0xe7a1;
}  // namespace rng_stream

}  // namespace mdeh

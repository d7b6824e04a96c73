#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace umind {

// Stateless 64-bit mixer; used to derive independent streams from a seed.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t substream = 0);

// Seeded generator whose draws are defined here rather than by the
// standard library's distributions, so sequences are identical across
// toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [0, n); n must be positive.
  std::size_t index(std::size_t n);
  // Standard normal (Box-Muller).
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace umind

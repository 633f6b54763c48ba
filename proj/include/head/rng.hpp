#pragma once

#include <cstdint>

namespace head {

// SplitMix64 finalizer. Used both to derive stream seeds and as the stream step.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for one generation run: mix(mix(mix(global) ^ prompt) ^ seed_index).
constexpr std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t prompt_index,
                                    std::uint64_t seed_index) noexcept {
  return mix64(mix64(mix64(global_seed) ^ prompt_index) ^ seed_index);
}

// Deterministic SplitMix64 stream with Box-Muller normals. The exact bit
// layout is fixed so trajectories can be reproduced by other implementations.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept;
  // Standard normal; values are produced in Box-Muller pairs.
  double normal() noexcept;

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace head

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace wal {

// Mixes a root seed with a list of stream coordinates (epoch, batch, pair...)
// into an independent 64-bit seed. Streams derived this way do not depend on
// evaluation order.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> coords);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  // Standard Gumbel(0, 1).
  double gumbel();
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace wal

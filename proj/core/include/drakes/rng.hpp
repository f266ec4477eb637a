#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace drakes {

// Mersenne-twister stream with hand-rolled transforms so that draws are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix(seed)) {}

  // Independent stream `index` derived from `seed`.
  static Rng stream(std::uint64_t seed, std::uint64_t index) { return Rng(mix(seed) ^ mix(index + 0x9e3779b97f4a7c15ULL)); }

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform on the open interval (0, 1).
  double uniform_open() { return (static_cast<double>(next() >> 12) + 0.5) * 0x1.0p-52; }

  double gumbel();
  double normal();

  std::size_t below(std::size_t n);

  // Index drawn from unnormalized nonnegative weights.
  std::size_t categorical(std::span<const double> weights);

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace drakes

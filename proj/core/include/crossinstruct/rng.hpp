#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace crossinstruct {

// xoshiro256** with SplitMix64 seeding. All distributions are implemented
// here rather than through <random> so that draws are identical across
// standard library implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  // Independent stream for (seed, stream ids...). Used to give each timestep
  // and view its own generator so results do not depend on execution order.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

  std::uint64_t next();
  result_type operator()() { return next(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);
  // Standard normal via Box-Muller (the second variate is cached).
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace crossinstruct

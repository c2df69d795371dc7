#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace richunet {

/// xoshiro256** generator seeded through splitmix64.
///
/// Distribution sampling is implemented here rather than through <random>
/// distributions, whose output is implementation-defined; this keeps seeded
/// runs bit-identical across standard libraries.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached second value, so state() is complete).
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::size_t below(std::size_t n);

  const State& state() const noexcept { return state_; }
  void set_state(const State& state) noexcept { state_ = state; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  State state_{};
};

/// One splitmix64 step; used for seeding and to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace richunet

#pragma once

// xoshiro256** generator. Its whole state is four 64-bit words, which is what
// checkpoints store; the helper draws below never cache values between calls.

#include <array>
#include <cstdint>
#include <limits>

namespace dbswin {

class Rng {
 public:
  using result_type = std::uint64_t;
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  // Expands `seed` with splitmix64.
  void reseed(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  // Uniform integer in [lo, hi].
  std::int64_t range(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller (uses two uniforms per call).
  double normal();
  // Normal(0, std) resampled until within two standard deviations.
  double truncated_normal(double std);

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  State state_{};
};

}  // namespace dbswin

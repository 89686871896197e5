#pragma once

#include <cstdint>

namespace dmo {

// Roles for independent random streams. The numeric values are part of the
// reproducibility contract; append new roles at the end.
enum class StreamRole : std::uint64_t {
  init = 1,
  reset = 2,
  action_noise = 3,
  model_sample = 4,
  critic_shuffle = 5,
  eval = 6,
  test = 7,
};

// Counter-based generator: the n-th draw is a pure function of
// (seed, role, index, n), so draws never depend on thread scheduling.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, StreamRole role, std::uint64_t index, std::uint64_t sub_index = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace dmo

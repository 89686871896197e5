#pragma once

// Smooth, contact-free control tasks. Dynamics and rewards are written once as
// tape expressions; plain stepping evaluates the same expressions on a scratch
// tape, so stepped values and on-tape values agree bit for bit.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmo/rng.hpp"
#include "dmo/tape.hpp"

namespace dmo {

struct EnvSpec {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  double dt = 0.05;
  std::vector<double> action_low;
  std::vector<double> action_high;
  std::uint32_t max_episode_steps = 192;
};

struct EnvState {
  std::vector<double> values;
  std::uint32_t steps_elapsed = 0;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
};

struct TapeStep {
  NodeId next;
  NodeId reward;  // shape (rows, 1)
};

// N independent rows. Each row draws its resets from the stream keyed by
// (seed, row, episode).
struct BatchState {
  Tensor states;  // N x state_dim
  std::vector<std::uint32_t> steps_elapsed;
  std::vector<std::uint64_t> episodes;
  std::uint64_t seed = 0;

  std::size_t size() const { return steps_elapsed.size(); }
};

struct BatchStepResult {
  Tensor next_states;      // after auto-reset
  Tensor terminal_states;  // before auto-reset (equals next_states on rows that are not done)
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::string_view name() const = 0;
  virtual const EnvSpec& spec() const = 0;

  // One integration step for already-clipped actions. s: (N, state_dim), a: (N, action_dim).
  virtual NodeId dynamics(Tape& tape, NodeId s, NodeId a) const = 0;
  // Per-row reward r(s, a), shape (N, 1). Must be smooth everywhere.
  virtual NodeId reward(Tape& tape, NodeId s, NodeId a) const = 0;
  // Smooth observation features fed to networks; identity by default.
  virtual NodeId features(Tape& tape, NodeId s) const { (void)tape; return s; }
  virtual std::size_t feature_dim() const { return spec().state_dim; }
  virtual void sample_initial(CounterRng& rng, std::span<double> state) const = 0;

  // Clips the action into bounds, then applies dynamics and reward.
  TapeStep step_on_tape(Tape& tape, NodeId s, NodeId a) const;
  StepResult step(const EnvState& state, std::span<const double> action) const;
  EnvState reset(std::uint64_t seed) const;

  BatchState make_batch(std::size_t num_rows, std::uint64_t seed) const;
  // Steps every row; rows that hit the time limit are re-initialized.
  // `threads` > 1 splits rows across worker threads without changing results.
  BatchStepResult batch_step(BatchState& batch, const Tensor& actions, std::size_t threads = 1) const;

  // Reward of (s, clip(a)) without recording the dynamics.
  NodeId reward_on_tape(Tape& tape, NodeId s, NodeId a) const;
  NodeId clip_on_tape(Tape& tape, NodeId a) const;

  // Plain evaluation helpers (no gradient).
  Tensor features_of(const Tensor& states) const;
  Tensor clip_actions(const Tensor& actions) const;

  // Initial state for `row` at episode index `episode` of a batch seeded with `seed`.
  void reset_row(std::uint64_t seed, std::size_t row, std::uint64_t episode, std::span<double> state) const;
};

// s = [x, v]; v' = v + dt a; x' = x + dt v'.
class DoubleIntegrator final : public Env {
 public:
  DoubleIntegrator();
  std::string_view name() const override { return "double_integrator"; }
  const EnvSpec& spec() const override { return spec_; }
  NodeId dynamics(Tape& tape, NodeId s, NodeId a) const override;
  NodeId reward(Tape& tape, NodeId s, NodeId a) const override;
  void sample_initial(CounterRng& rng, std::span<double> state) const override;

 private:
  EnvSpec spec_;
};

// s = [theta, theta_dot], theta = 0 hanging, theta = pi upright.
class Pendulum final : public Env {
 public:
  static constexpr double kGravity = 9.81;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  // Quadratic match of (1 + cos theta) to wrap(theta - pi)^2 near upright.
  static constexpr double kAngleWeight = 2.0;

  Pendulum();
  std::string_view name() const override { return "pendulum"; }
  const EnvSpec& spec() const override { return spec_; }
  NodeId dynamics(Tape& tape, NodeId s, NodeId a) const override;
  NodeId reward(Tape& tape, NodeId s, NodeId a) const override;
  NodeId features(Tape& tape, NodeId s) const override;
  std::size_t feature_dim() const override { return 3; }
  void sample_initial(CounterRng& rng, std::span<double> state) const override;

 private:
  EnvSpec spec_;
};

// s = [x, x_dot, theta, theta_dot], theta = 0 hanging.
class CartPole final : public Env {
 public:
  static constexpr double kGravity = 9.81;
  static constexpr double kCartMass = 1.0;
  static constexpr double kPoleMass = 0.1;
  static constexpr double kHalfLength = 0.5;

  CartPole();
  std::string_view name() const override { return "cartpole"; }
  const EnvSpec& spec() const override { return spec_; }
  NodeId dynamics(Tape& tape, NodeId s, NodeId a) const override;
  NodeId reward(Tape& tape, NodeId s, NodeId a) const override;
  NodeId features(Tape& tape, NodeId s) const override;
  std::size_t feature_dim() const override { return 5; }
  void sample_initial(CounterRng& rng, std::span<double> state) const override;

 private:
  EnvSpec spec_;
};

// "double_integrator" | "pendulum" | "cartpole" (also accepts the *_swingup aliases).
std::unique_ptr<Env> make_env(std::string_view name);
std::vector<std::string> env_names();

// Wraps an angle into (-pi, pi].
double wrap_to_pi(double angle);

}  // namespace dmo

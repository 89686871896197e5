#pragma once

// Rollout construction and the training loop. Three gradient pathways share
// one window layout:
//   simulator  - next states recorded through the differentiable simulator
//   decoupled  - simulator values forward, learned-model Jacobians backward
//   model      - states unrolled and differentiated through the model alone

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmo/actor.hpp"
#include "dmo/config.hpp"
#include "dmo/critic.hpp"
#include "dmo/dynamics_model.hpp"
#include "dmo/envs.hpp"

namespace dmo {

enum class GradientPath { simulator, decoupled, model };

struct TrajectoryWindow {
  Tape tape;
  Actor::Binding actor;
  std::size_t horizon = 0;
  std::size_t num_actors = 0;

  std::vector<NodeId> state_nodes;     // H+1; entry 0 is a detached constant
  std::vector<NodeId> terminal_nodes;  // H; next state before any reset
  std::vector<NodeId> action_nodes;    // H
  std::vector<NodeId> reward_nodes;    // H, each (N, 1)
  std::vector<NodeId> entropy_nodes;   // H, each (N, 1)

  std::vector<Tensor> states;           // H+1 forward values
  std::vector<Tensor> terminal_states;  // H
  std::vector<Tensor> actions;          // H, as applied (clipped)
  Tensor rewards;                       // H x N forward rewards
  std::vector<std::uint8_t> dones;      // H x N
};

// Standard normal action noise for one window, indexed [h](row, dim).
std::vector<Tensor> window_noise(std::uint64_t seed, std::uint64_t epoch, std::size_t horizon, std::size_t rows,
                                 std::size_t action_dim);

// Steps the simulator on the tape; `batch` advances and, when given, the
// buffer receives every transition.
TrajectoryWindow rollout_true(const Env& env, const Actor& actor, BatchState& batch, std::span<const Tensor> noise,
                              std::size_t threads = 1, ReplayBuffer* buffer = nullptr);
// Simulator forward, model backward through a gradient swap at every step.
TrajectoryWindow rollout_decoupled(const Env& env, const TransitionModel& model, const Actor& actor,
                                   BatchState& batch, std::span<const Tensor> noise, std::size_t threads = 1,
                                   ReplayBuffer* buffer = nullptr);
// Model-only unroll from the batch's current states; never touches the env
// or a buffer. Rows reaching the time limit restart from their next reset state.
TrajectoryWindow rollout_model_forward(const Env& env, const TransitionModel& model, const Actor& actor,
                                       BatchState batch, std::span<const Tensor> noise);

struct LossSettings {
  AlgoVariant variant = AlgoVariant::dmo_shac;
  double gamma = 0.99;
  double bptt_discount = 1.0;
  bool bootstrap_on_timeout = true;
  double alpha = 0.0;  // entropy weight, maximum-entropy variant only
};

// Negative window return averaged over rows (scalar node on the window tape).
//   critic variants: -(sum_h gamma^h r_h + gamma^H V(s_H)), discount restarting
//                    after a done with gamma^k V(terminal) when bootstrapping
//   bptt variants:   -sum_h bptt_discount^h r_h
//   maximum entropy: r_h + alpha * entropy(s_h), ensemble-min bootstrap
NodeId policy_loss(TrajectoryWindow& window, const LossSettings& settings, const Env& env, const Critic* critic);

// Flattened actor gradient of the loss (network layers, then shared log-std).
std::vector<double> policy_gradient(TrajectoryWindow& window, NodeId loss, const Actor& actor);

struct GradientTriplet {
  std::vector<double> g_true;
  std::vector<double> g_dmo;
  std::vector<double> g_forward;
};

// Three gradients from identical initial states and noise; `batch` is not modified.
GradientTriplet gradient_triplet(const Env& env, const TransitionModel& model, const Actor& actor,
                                 const Critic* critic, const BatchState& batch, std::span<const Tensor> noise,
                                 const LossSettings& settings);

struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::uint64_t env_steps = 0;
  std::optional<double> episodic_return;
  std::optional<double> policy_loss;
  std::optional<double> critic_loss;
  std::optional<double> model_nll;
  std::optional<double> grad_norm;
  std::optional<double> cos_dmo_true;
  std::optional<double> cos_fwd_true;
  std::optional<double> alpha;
  std::optional<double> wallclock_s;
};

// Owns every component of one seeded run.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::uint64_t seed);

  // One iteration: model fit, rollout, actor step, critic fit, temperature.
  // With `triplet`, also computes the three-way gradient comparison.
  EpochMetrics train_epoch(bool triplet = false);
  bool finished() const { return epoch_ >= cfg_.total_epochs(); }

  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t env_steps() const { return env_steps_; }
  const Env& env() const { return *env_; }
  Actor& actor() { return *actor_; }
  const Actor& actor() const { return *actor_; }
  Critic* critic() { return critic_.get(); }
  DynamicsModel* model() { return model_.get(); }
  ReplayBuffer* buffer() { return buffer_.get(); }
  const BatchState& batch() const { return batch_; }
  const EntropyTemperature& temperature() const { return temperature_; }
  // Gradients from the most recent epoch that ran the comparison.
  const std::optional<GradientTriplet>& last_triplet() const { return last_triplet_; }
  // Learning-rate multiplier for the current epoch.
  double lr_factor() const;
  LossSettings loss_settings() const;

  Archive to_archive() const;
  void restore(const Archive& ar);
  void save(const std::string& path) const { to_archive().write(path); }
  static Trainer load(const std::string& path);

 private:
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  std::unique_ptr<Env> env_;
  std::unique_ptr<Actor> actor_;
  std::unique_ptr<Critic> critic_;
  std::unique_ptr<DynamicsModel> model_;
  std::unique_ptr<ReplayBuffer> buffer_;
  EntropyTemperature temperature_;
  BatchState batch_;
  std::uint64_t epoch_ = 0;
  std::uint64_t env_steps_ = 0;
  std::vector<double> running_return_;
  std::vector<double> last_return_;
  std::vector<std::uint8_t> has_return_;
  double wallclock_ = 0.0;
  std::optional<GradientTriplet> last_triplet_;
};

struct EvalResult {
  double mean_return = 0.0;
  double mean_discounted_return = 0.0;
  std::vector<double> returns;
  std::vector<std::vector<double>> final_states;
};

// Deterministic (mean-action) policy over full episodes from the eval streams.
EvalResult evaluate_policy(const Env& env, const Actor& actor, std::size_t episodes, double gamma,
                           std::uint64_t seed);

}  // namespace dmo

#pragma once

// Learned Gaussian dynamics model p(s' | s, a) = N(mu, diag(sigma^2)) with a
// state-delta mean, trained by maximum likelihood on simulator transitions.

#include <cstdint>
#include <span>
#include <vector>

#include "dmo/archive.hpp"
#include "dmo/envs.hpp"
#include "dmo/nn.hpp"

namespace dmo {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  std::vector<double> next_state;
  double reward = 0.0;
  bool done = false;
};

// FIFO ring of transitions.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t state_dim, std::size_t action_dim);

  void push(const Transition& t);
  void push_batch(const Tensor& states, const Tensor& actions, const Tensor& next_states,
                  std::span<const double> rewards, std::span<const std::uint8_t> dones);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t write_cursor() const { return cursor_; }
  // i-th oldest transition, 0 <= i < size().
  Transition at(std::size_t i) const;

  // Uniform sample with replacement; fills (batch, dim) tensors.
  void sample(CounterRng& rng, std::size_t batch, Tensor& states, Tensor& actions, Tensor& next_states) const;

  void save(Archive& ar, const std::string& prefix) const;
  void load(const Archive& ar, const std::string& prefix);

 private:
  std::size_t slot(std::size_t i) const;

  std::size_t capacity_;
  std::size_t state_dim_;
  std::size_t action_dim_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::vector<double> states_;
  std::vector<double> actions_;
  std::vector<double> next_states_;
  std::vector<double> rewards_;
  std::vector<std::uint8_t> dones_;
};

// Per-dimension running mean and variance (Welford).
class RunningStats {
 public:
  RunningStats() = default;
  explicit RunningStats(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  void update(const Tensor& rows);
  std::size_t dim() const { return mean_.size(); }
  double count() const { return count_; }
  Tensor mean() const;
  // Standard deviation; dimensions with (near) zero spread report 1.
  Tensor stddev() const;

  void save(Archive& ar, const std::string& prefix) const;
  void load(const Archive& ar, const std::string& prefix);

 private:
  double count_ = 0.0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

// Anything that can put a differentiable next-state mean on the tape.
class TransitionModel {
 public:
  virtual ~TransitionModel() = default;
  // Mean next state for rows of (s, a), shape (N, state_dim). Parameters enter
  // the tape as constants.
  virtual NodeId mean_on_tape(Tape& tape, NodeId s, NodeId a) const = 0;
};

// s' = s A + a B + c, fitted in closed form by least squares. Recovers linear
// dynamics exactly from enough transitions.
class LinearModel final : public TransitionModel {
 public:
  LinearModel(std::size_t state_dim, std::size_t action_dim);

  // Returns the maximum absolute residual on the fitted data.
  double fit(const Tensor& states, const Tensor& actions, const Tensor& next_states);
  NodeId mean_on_tape(Tape& tape, NodeId s, NodeId a) const override;

  const Tensor& state_matrix() const { return a_; }
  const Tensor& action_matrix() const { return b_; }
  const Tensor& offset() const { return c_; }
  // Adds a constant to every predicted next state (for model-error studies).
  void set_offset(Tensor c) { c_ = std::move(c); }

 private:
  Tensor a_, b_, c_;
};

struct GaussianParams {
  Tensor mean;
  Tensor log_std;
};

struct DynamicsModelConfig {
  std::vector<std::size_t> hidden{128, 128};
  Activation act = Activation::silu;
  double log_std_min = -10.0;
  double log_std_max = 2.0;
  AdamConfig adam{};
};

struct ModelUpdateResult {
  double mean_nll = 0.0;  // per transition, averaged over the steps taken
  std::size_t steps = 0;
};

class DynamicsModel final : public TransitionModel {
 public:
  DynamicsModel(const Env& env, DynamicsModelConfig cfg, CounterRng& init_rng);

  // Batched prediction over rows of (states, actions).
  GaussianParams predict(const Tensor& states, const Tensor& actions) const;

  struct TapeOutput {
    NodeId mean;
    NodeId log_std;
  };
  // Records the prediction at (s, a). `bound` comes from net().bind or bind_constant.
  TapeOutput predict_on_tape(Tape& tape, std::span<const NodeId> bound, NodeId s, NodeId a) const;

  NodeId mean_on_tape(Tape& tape, NodeId s, NodeId a) const override;

  // Accumulates normalization statistics for newly collected transitions.
  void observe(const Tensor& states, const Tensor& actions, const Tensor& next_states);
  // Copies running statistics into the normalizer used by predict.
  void freeze_normalization();

  // `steps` Adam steps of Gaussian NLL on uniformly sampled minibatches.
  ModelUpdateResult update(const ReplayBuffer& buffer, std::size_t batch_size, std::size_t steps, double lr,
                           CounterRng& rng);

  // Mean per-transition NLL on the given data (no update).
  double nll(const Tensor& states, const Tensor& actions, const Tensor& next_states) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  Adam& optimizer() { return adam_; }
  const DynamicsModelConfig& config() const { return cfg_; }

  void save(Archive& ar, const std::string& prefix) const;
  void load(const Archive& ar, const std::string& prefix);

 private:
  const Env* env_;
  DynamicsModelConfig cfg_;
  Mlp net_;
  Adam adam_;
  RunningStats in_stats_;
  RunningStats delta_stats_;
  Tensor in_mean_, in_inv_std_, out_mean_, out_std_, out_log_std_;
};

}  // namespace dmo

#pragma once

// Tanh-squashed Gaussian policy with reparameterized sampling, and the
// entropy temperature used by the maximum-entropy variant.

#include <span>
#include <vector>

#include "dmo/archive.hpp"
#include "dmo/envs.hpp"
#include "dmo/nn.hpp"

namespace dmo {

struct ActorConfig {
  std::vector<std::size_t> hidden{128, 64, 32};
  Activation act = Activation::elu;
  // true: the network also outputs a per-state log-std; false: one learnable
  // log-std vector shared by all states.
  bool state_dependent_std = false;
  double init_log_std = -1.0;
  double log_std_min = -5.0;
  double log_std_max = 1.0;
  double output_scale = 0.1;
  AdamConfig adam{};
};

class Actor {
 public:
  Actor(const Env& env, ActorConfig cfg, CounterRng& init_rng);

  struct Binding {
    std::vector<NodeId> net;
    NodeId log_std{};  // shared log-std leaf (unused with state-dependent std)
  };
  // Parameters enter as leaves (trainable) or constants.
  Binding bind(Tape& tape) const;
  Binding bind_constant(Tape& tape) const;

  struct TapeAction {
    NodeId action;    // mid + half * tanh(u), (N, action_dim)
    NodeId pre_squash;  // u = mean + exp(log_std) * noise
    NodeId mean;      // pre-squash mean
    NodeId log_std;   // (N, action_dim) or (action_dim,) when shared
    NodeId log_prob;  // (N, 1), includes the tanh change of variables
  };
  // `features` are env features; `noise` is standard normal of shape (N, action_dim).
  TapeAction act_on_tape(Tape& tape, const Binding& bound, NodeId features, const Tensor& noise) const;

  // Differential entropy of the pre-squash Gaussian per row, (N, 1).
  NodeId entropy_on_tape(Tape& tape, const TapeAction& act, std::size_t rows) const;

  // Deterministic action mid + half * tanh(mean) for each row of features.
  Tensor mean_action(const Tensor& features) const;
  // Entropy per row (N,); only defined for the state-dependent policy.
  Tensor policy_entropy(const Tensor& features) const;
  // Pre-squash log-std per row, (N, action_dim).
  Tensor log_std(const Tensor& features) const;

  std::size_t action_dim() const { return action_dim_; }
  const ActorConfig& config() const { return cfg_; }

  // Trainable parameters in flattening order: network layers, then the shared
  // log-std when present.
  std::vector<Tensor> params() const;
  void set_params(std::vector<Tensor> params);
  std::vector<Tensor> gather(const GradientMap& grads, const Binding& bound) const;

  // Clipped Adam step on the given gradients. Returns the pre-clip norm.
  double apply_gradients(std::vector<Tensor> grads, double lr, double clip_norm);
  Adam& optimizer() { return adam_; }

  void save(Archive& ar, const std::string& prefix) const;
  void load(const Archive& ar, const std::string& prefix);

 private:
  NodeId head(Tape& tape, const Binding& bound, NodeId features, NodeId* log_std) const;

  ActorConfig cfg_;
  std::size_t action_dim_;
  std::vector<double> mid_;
  std::vector<double> half_;
  Mlp net_;
  Tensor shared_log_std_;
  Adam adam_;
};

struct EntropyTemperature {
  double alpha = 1.0;
  double target_entropy = 0.0;
  double lr = 5e-3;
};

// alpha <- alpha - lr * alpha * (H - H_target), kept at or above 1e-6.
void temperature_update(EntropyTemperature& temp, double mean_entropy);

}  // namespace dmo

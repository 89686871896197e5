#pragma once

// State-value learning on simulator states with TD(lambda) targets.

#include <cstdint>
#include <span>
#include <vector>

#include "dmo/archive.hpp"
#include "dmo/nn.hpp"

namespace dmo {

struct ValueTargetBatch {
  Tensor targets;                     // H x N
  std::vector<std::uint8_t> terminal;  // H x N, 1 where the row's segment ends at this step
};

// Truncated lambda-returns over an H-step window.
//
//   rewards: H x N, values: (H+1) x N (row H is the bootstrap at the window end),
//   dones:   H x N row-major flags.
//
// V_h(s_t) = sum_{n=t}^{t+h-1} gamma^(n-t) r_n + gamma^h V(s_{t+h})
// Vhat(s_t) = (1-lambda) sum_{h=1}^{H-t-1} lambda^(h-1) V_h(s_t) + lambda^(H-t-1) V_{H-t}(s_t)
//
// A done flag at step n ends the segment: the value after it is treated as 0
// and accumulation restarts at n+1.
ValueTargetBatch td_lambda_targets(const Tensor& rewards, const Tensor& values, std::span<const std::uint8_t> dones,
                                   double gamma, double lambda);

struct CriticConfig {
  std::vector<std::size_t> hidden{64, 64};
  Activation act = Activation::elu;
  std::size_t ensemble = 1;
  bool use_target = true;
  double tau = 0.8;  // weight of the online network in the Polyak update
  std::size_t minibatches = 4;
  AdamConfig adam{};
};

struct CriticUpdateResult {
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

class Critic {
 public:
  Critic(std::size_t feature_dim, CriticConfig cfg, CounterRng& init_rng);

  // Minimum over heads, shape (N, 1). `target` selects the target copies when
  // they exist. Parameters enter the tape as constants.
  NodeId value_on_tape(Tape& tape, NodeId features, bool target) const;
  // Minimum over heads for each row of `features`, shape (N,).
  Tensor values(const Tensor& features, bool target) const;
  // Per-head values, shape (heads, N).
  Tensor head_values(const Tensor& features, bool target) const;
  double ensemble_value(std::span<const double> features) const;

  // Squared-error regression toward `targets` over `mini_epochs` shuffled
  // passes; then the Polyak target update when target copies are kept.
  CriticUpdateResult update(const Tensor& features, const Tensor& targets, double lr, std::size_t mini_epochs,
                            CounterRng& rng);

  std::size_t ensemble_size() const { return heads_.size(); }
  const CriticConfig& config() const { return cfg_; }
  std::vector<Mlp>& heads() { return heads_; }
  std::vector<Mlp>& target_heads() { return targets_; }
  const std::vector<Mlp>& heads() const { return heads_; }
  const std::vector<Mlp>& target_heads() const { return targets_; }

  void save(Archive& ar, const std::string& prefix) const;
  void load(const Archive& ar, const std::string& prefix);

 private:
  const std::vector<Mlp>& pick(bool target) const { return target && cfg_.use_target ? targets_ : heads_; }

  CriticConfig cfg_;
  std::vector<Mlp> heads_;
  std::vector<Mlp> targets_;
  Adam adam_;
};

}  // namespace dmo

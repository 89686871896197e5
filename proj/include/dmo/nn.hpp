#pragma once

// Small multilayer perceptrons on the tape, plus Adam and gradient utilities.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmo/rng.hpp"
#include "dmo/tape.hpp"

namespace dmo {

enum class Activation { elu, silu, tanh };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation act);

struct MlpSpec {
  std::size_t in = 1;
  std::vector<std::size_t> hidden;
  std::size_t out = 1;
  Activation act = Activation::elu;
};

// Parameters are stored layer by layer as [W0, b0, W1, b1, ...] with W of
// shape (fan_in, fan_out). Flattened gradients follow this order.
class Mlp {
 public:
  Mlp() = default;
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; the output layer is
  // multiplied by `output_scale` (0 gives a zero output layer).
  Mlp(MlpSpec spec, CounterRng& rng, double output_scale = 1.0);

  const MlpSpec& spec() const { return spec_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t num_params() const;

  std::vector<NodeId> bind(Tape& tape) const;
  std::vector<NodeId> bind_constant(Tape& tape) const;
  NodeId forward(Tape& tape, std::span<const NodeId> bound, NodeId x) const;

  // Forward pass without gradient bookkeeping.
  Tensor evaluate(const Tensor& x) const;

 private:
  MlpSpec spec_;
  std::vector<Tensor> params_;
};

NodeId apply_activation(Tape& tape, Activation act, NodeId x);

std::vector<Tensor> gather_grads(const GradientMap& grads, std::span<const NodeId> bound);
std::vector<double> flatten(const std::vector<Tensor>& tensors);
double global_norm(const std::vector<Tensor>& tensors);
// Rescales in place so the global norm is at most max_norm; returns the
// norm before clipping.
double clip_by_global_norm(std::vector<Tensor>& grads, double max_norm);
// target <- (1 - tau) * target + tau * online
void polyak_update(std::vector<Tensor>& target, const std::vector<Tensor>& online, double tau);

struct AdamConfig {
  double beta1 = 0.7;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
};

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, const std::vector<Tensor>& params);

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);

  const AdamConfig& config() const { return cfg_; }
  std::vector<Tensor>& first_moment() { return m_; }
  std::vector<Tensor>& second_moment() { return v_; }
  std::uint64_t& step_count() { return t_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }
  std::uint64_t step_count() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

}  // namespace dmo

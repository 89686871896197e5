#include "dmo/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "dmo/errors.hpp"

namespace dmo {

Activation parse_activation(const std::string& name) {
  if (name == "elu") return Activation::elu;
  if (name == "silu") return Activation::silu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "' (expected elu, silu or tanh)");
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::elu: return "elu";
    case Activation::silu: return "silu";
    case Activation::tanh: return "tanh";
  }
  return "elu";
}

Mlp::Mlp(MlpSpec spec, CounterRng& rng, double output_scale) : spec_(std::move(spec)) {
  std::vector<std::size_t> dims{spec_.in};
  dims.insert(dims.end(), spec_.hidden.begin(), spec_.hidden.end());
  dims.push_back(spec_.out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const bool last = l + 2 == dims.size();
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    const double s = last ? output_scale : 1.0;
    Tensor w({dims[l], dims[l + 1]});
    Tensor b({dims[l + 1]});
    for (double& v : w.data()) v = s * rng.uniform(-bound, bound);
    for (double& v : b.data()) v = s * rng.uniform(-bound, bound);
    params_.push_back(std::move(w));
    params_.push_back(std::move(b));
  }
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) n += p.size();
  return n;
}

std::vector<NodeId> Mlp::bind(Tape& tape) const {
  std::vector<NodeId> ids;
  ids.reserve(params_.size());
  for (const Tensor& p : params_) ids.push_back(tape.leaf(p));
  return ids;
}

std::vector<NodeId> Mlp::bind_constant(Tape& tape) const {
  std::vector<NodeId> ids;
  ids.reserve(params_.size());
  for (const Tensor& p : params_) ids.push_back(tape.constant(p));
  return ids;
}

NodeId apply_activation(Tape& tape, Activation act, NodeId x) {
  switch (act) {
    case Activation::elu: return tape.elu(x);
    case Activation::silu: return tape.silu(x);
    case Activation::tanh: return tape.tanh(x);
  }
  return x;
}

NodeId Mlp::forward(Tape& tape, std::span<const NodeId> bound, NodeId x) const {
  if (bound.size() != params_.size()) throw std::invalid_argument("Mlp::forward: parameter binding size mismatch");
  NodeId h = x;
  const std::size_t layers = params_.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.add(tape.matmul(h, bound[2 * l]), bound[2 * l + 1]);
    if (l + 1 < layers) h = apply_activation(tape, spec_.act, h);
  }
  return h;
}

Tensor Mlp::evaluate(const Tensor& x) const {
  Tape tape;
  const auto bound = bind_constant(tape);
  return tape.value(forward(tape, bound, tape.constant(x)));
}

std::vector<Tensor> gather_grads(const GradientMap& grads, std::span<const NodeId> bound) {
  std::vector<Tensor> out;
  out.reserve(bound.size());
  for (NodeId id : bound) out.push_back(grads.grad(id));
  return out;
}

std::vector<double> flatten(const std::vector<Tensor>& tensors) {
  std::vector<double> out;
  for (const Tensor& t : tensors) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

double global_norm(const std::vector<Tensor>& tensors) {
  double s = 0.0;
  for (const Tensor& t : tensors) {
    for (double v : t.data()) s += v * v;
  }
  return std::sqrt(s);
}

double clip_by_global_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Tensor& t : grads) {
      for (double& v : t.data()) v *= f;
    }
  }
  return norm;
}

void polyak_update(std::vector<Tensor>& target, const std::vector<Tensor>& online, double tau) {
  if (target.size() != online.size()) throw ShapeError("polyak_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].shape() != online[i].shape()) throw ShapeError("polyak_update: shape mismatch");
    if (tau == 1.0) {
      target[i] = online[i];
      continue;
    }
    // incremental form keeps equal parameters exactly equal
    for (std::size_t j = 0; j < target[i].size(); ++j) target[i][j] += tau * (online[i][j] - target[i][j]);
  }
}

Adam::Adam(AdamConfig cfg, const std::vector<Tensor>& params) : cfg_(cfg) {
  for (const Tensor& p : params) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("Adam::step: parameter count mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) throw ShapeError("Adam::step: gradient shape mismatch");
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      if (lr == 0.0) continue;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      if (cfg_.weight_decay > 0.0) p[j] -= lr * cfg_.weight_decay * p[j];
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace dmo

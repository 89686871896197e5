#include "dmo/actor.hpp"

#include <cmath>
#include <stdexcept>

#include "dmo/errors.hpp"

namespace dmo {

namespace {

constexpr double kLog2 = 0.69314718055994530942;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

}  // namespace

Actor::Actor(const Env& env, ActorConfig cfg, CounterRng& init_rng)
    : cfg_(std::move(cfg)), action_dim_(env.spec().action_dim) {
  if (!(cfg_.log_std_min < cfg_.log_std_max)) throw std::invalid_argument("Actor: empty log-std range");
  const auto& sp = env.spec();
  for (std::size_t i = 0; i < action_dim_; ++i) {
    mid_.push_back(0.5 * (sp.action_high[i] + sp.action_low[i]));
    half_.push_back(0.5 * (sp.action_high[i] - sp.action_low[i]));
  }
  const std::size_t outs = cfg_.state_dependent_std ? 2 * action_dim_ : action_dim_;
  net_ = Mlp(MlpSpec{env.feature_dim(), cfg_.hidden, outs, cfg_.act}, init_rng, cfg_.output_scale);
  if (cfg_.state_dependent_std) {
    // bias the log-std outputs toward the configured initial value
    Tensor& out_bias = net_.params().back();
    for (std::size_t i = 0; i < action_dim_; ++i) out_bias[action_dim_ + i] = cfg_.init_log_std;
  } else {
    shared_log_std_ = Tensor::filled({action_dim_}, cfg_.init_log_std);
  }
  adam_ = Adam(cfg_.adam, params());
}

Actor::Binding Actor::bind(Tape& tape) const {
  Binding b{net_.bind(tape), {}};
  if (!cfg_.state_dependent_std) b.log_std = tape.leaf(shared_log_std_);
  return b;
}

Actor::Binding Actor::bind_constant(Tape& tape) const {
  Binding b{net_.bind_constant(tape), {}};
  if (!cfg_.state_dependent_std) b.log_std = tape.constant(shared_log_std_);
  return b;
}

NodeId Actor::head(Tape& tape, const Binding& bound, NodeId features, NodeId* log_std) const {
  const NodeId out = net_.forward(tape, bound.net, features);
  if (cfg_.state_dependent_std) {
    *log_std = tape.clamp(tape.slice(out, action_dim_, 2 * action_dim_), cfg_.log_std_min, cfg_.log_std_max);
    return tape.slice(out, 0, action_dim_);
  }
  *log_std = tape.clamp(bound.log_std, cfg_.log_std_min, cfg_.log_std_max);
  return out;
}

Actor::TapeAction Actor::act_on_tape(Tape& tape, const Binding& bound, NodeId features, const Tensor& noise) const {
  TapeAction r{};
  r.mean = head(tape, bound, features, &r.log_std);
  const Tensor& mv = tape.value(r.mean);
  if (noise.shape() != mv.shape()) {
    throw ShapeError("Actor::act_on_tape: noise " + shape_str(noise.shape()) + " does not match mean " +
                     shape_str(mv.shape()));
  }
  const std::size_t n = mv.rows();
  NodeId ls_full = r.log_std;
  if (!cfg_.state_dependent_std) ls_full = tape.add(tape.constant(Tensor({n, action_dim_})), r.log_std);
  r.pre_squash = tape.reparam_sample(r.mean, ls_full, noise);
  r.action = tape.add(tape.mul(tape.tanh(r.pre_squash), tape.constant(Tensor::vector(half_))),
                      tape.constant(Tensor::vector(mid_)));

  // log N(u; mean, sigma) with u - mean = sigma * noise, minus log |d action / d u|.
  Tensor base({n, action_dim_});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < action_dim_; ++j) {
      const double e = noise.at(i, j);
      base.at(i, j) = -0.5 * e * e - kHalfLog2Pi - std::log(half_[j]);
    }
  }
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
  const NodeId u = r.pre_squash;
  const NodeId log_jac =
      tape.scale(tape.add_scalar(tape.neg(tape.add(u, tape.softplus(tape.scale(u, -2.0)))), kLog2), 2.0);
  r.log_prob = tape.row_sum(tape.sub(tape.sub(tape.constant(std::move(base)), ls_full), log_jac));
  return r;
}

NodeId Actor::entropy_on_tape(Tape& tape, const TapeAction& act, std::size_t rows) const {
  NodeId ls = act.log_std;
  if (!cfg_.state_dependent_std) ls = tape.add(tape.constant(Tensor({rows, action_dim_})), ls);
  return tape.add_scalar(tape.row_sum(ls), static_cast<double>(action_dim_) * (0.5 + kHalfLog2Pi));
}

Tensor Actor::mean_action(const Tensor& features) const {
  Tape tape;
  NodeId ls;
  const NodeId m = head(tape, bind_constant(tape), tape.constant(features), &ls);
  Tensor out = tape.value(m);
  const std::size_t n = out.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < action_dim_; ++j) out.at(i, j) = mid_[j] + half_[j] * std::tanh(out.at(i, j));
  }
  return out;
}

Tensor Actor::log_std(const Tensor& features) const {
  Tape tape;
  NodeId ls;
  head(tape, bind_constant(tape), tape.constant(features), &ls);
  const Tensor& v = tape.value(ls);
  if (cfg_.state_dependent_std) return v;
  Tensor out({features.rows(), action_dim_});
  for (std::size_t i = 0; i < out.rows(); ++i) std::copy(v.data().begin(), v.data().end(), out.row(i).begin());
  return out;
}

Tensor Actor::policy_entropy(const Tensor& features) const {
  if (!cfg_.state_dependent_std) {
    throw std::logic_error("policy_entropy requires the state-dependent (maximum-entropy) policy");
  }
  const Tensor ls = log_std(features);
  Tensor out({ls.rows()});
  for (std::size_t i = 0; i < ls.rows(); ++i) {
    double s = 0.0;
    for (double v : ls.row(i)) s += v;
    out[i] = s + static_cast<double>(action_dim_) * (0.5 + kHalfLog2Pi);
  }
  return out;
}

std::vector<Tensor> Actor::params() const {
  std::vector<Tensor> p = net_.params();
  if (!cfg_.state_dependent_std) p.push_back(shared_log_std_);
  return p;
}

void Actor::set_params(std::vector<Tensor> params) {
  const std::size_t layers = net_.params().size();
  const std::size_t expect = layers + (cfg_.state_dependent_std ? 0 : 1);
  if (params.size() != expect) throw ShapeError("Actor::set_params: wrong parameter count");
  for (std::size_t i = 0; i < layers; ++i) {
    if (params[i].shape() != net_.params()[i].shape()) throw ShapeError("Actor::set_params: shape mismatch");
    net_.params()[i] = std::move(params[i]);
  }
  if (!cfg_.state_dependent_std) {
    if (params.back().shape() != shared_log_std_.shape()) throw ShapeError("Actor::set_params: shape mismatch");
    shared_log_std_ = std::move(params.back());
  }
}

std::vector<Tensor> Actor::gather(const GradientMap& grads, const Binding& bound) const {
  std::vector<Tensor> g = gather_grads(grads, bound.net);
  if (!cfg_.state_dependent_std) g.push_back(grads.grad(bound.log_std));
  return g;
}

double Actor::apply_gradients(std::vector<Tensor> grads, double lr, double clip_norm) {
  const double norm = clip_by_global_norm(grads, clip_norm);
  if (!std::isfinite(norm)) throw DivergenceError("actor gradient is not finite");
  std::vector<Tensor> p = params();
  adam_.step(p, grads, lr);
  set_params(std::move(p));
  return norm;
}

void Actor::save(Archive& ar, const std::string& prefix) const {
  ar.put_tensors(prefix + ".params", params());
  ar.put_tensors(prefix + ".adam.m", adam_.first_moment());
  ar.put_tensors(prefix + ".adam.v", adam_.second_moment());
  ar.put_u64(prefix + ".adam.t", adam_.step_count());
}

void Actor::load(const Archive& ar, const std::string& prefix) {
  set_params(ar.get_tensors(prefix + ".params"));
  adam_.first_moment() = ar.get_tensors(prefix + ".adam.m");
  adam_.second_moment() = ar.get_tensors(prefix + ".adam.v");
  adam_.step_count() = ar.get_u64(prefix + ".adam.t");
}

void temperature_update(EntropyTemperature& temp, double mean_entropy) {
  if (!std::isfinite(mean_entropy)) throw DivergenceError("policy entropy is not finite");
  temp.alpha -= temp.lr * temp.alpha * (mean_entropy - temp.target_entropy);
  if (temp.alpha < 1e-6) temp.alpha = 1e-6;
}

}  // namespace dmo

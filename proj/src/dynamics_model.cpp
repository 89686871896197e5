#include "dmo/dynamics_model.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "dmo/errors.hpp"

namespace dmo {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t state_dim, std::size_t action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

std::size_t ReplayBuffer::slot(std::size_t i) const {
  // oldest entry lives at the write cursor once the ring is full
  return size_ < capacity_ ? i : (cursor_ + i) % capacity_;
}

void ReplayBuffer::push(const Transition& t) {
  if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_) {
    throw ShapeError("ReplayBuffer::push: transition dimensions do not match");
  }
  auto finite = [](const std::vector<double>& v) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  };
  if (!finite(t.state) || !finite(t.action) || !finite(t.next_state) || !std::isfinite(t.reward)) {
    throw std::invalid_argument("ReplayBuffer::push: non-finite transition");
  }
  if (size_ < capacity_) {
    states_.insert(states_.end(), t.state.begin(), t.state.end());
    actions_.insert(actions_.end(), t.action.begin(), t.action.end());
    next_states_.insert(next_states_.end(), t.next_state.begin(), t.next_state.end());
    rewards_.push_back(t.reward);
    dones_.push_back(t.done ? 1 : 0);
    ++size_;
  } else {
    std::copy(t.state.begin(), t.state.end(), states_.begin() + cursor_ * state_dim_);
    std::copy(t.action.begin(), t.action.end(), actions_.begin() + cursor_ * action_dim_);
    std::copy(t.next_state.begin(), t.next_state.end(), next_states_.begin() + cursor_ * state_dim_);
    rewards_[cursor_] = t.reward;
    dones_[cursor_] = t.done ? 1 : 0;
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

void ReplayBuffer::push_batch(const Tensor& states, const Tensor& actions, const Tensor& next_states,
                              std::span<const double> rewards, std::span<const std::uint8_t> dones) {
  const std::size_t n = states.rows();
  if (actions.rows() != n || next_states.rows() != n || rewards.size() != n || dones.size() != n) {
    throw ShapeError("ReplayBuffer::push_batch: row counts differ");
  }
  Transition t;
  for (std::size_t r = 0; r < n; ++r) {
    t.state.assign(states.row(r).begin(), states.row(r).end());
    t.action.assign(actions.row(r).begin(), actions.row(r).end());
    t.next_state.assign(next_states.row(r).begin(), next_states.row(r).end());
    t.reward = rewards[r];
    t.done = dones[r] != 0;
    push(t);
  }
}

Transition ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("ReplayBuffer::at");
  const std::size_t k = slot(i);
  Transition t;
  t.state.assign(states_.begin() + k * state_dim_, states_.begin() + (k + 1) * state_dim_);
  t.action.assign(actions_.begin() + k * action_dim_, actions_.begin() + (k + 1) * action_dim_);
  t.next_state.assign(next_states_.begin() + k * state_dim_, next_states_.begin() + (k + 1) * state_dim_);
  t.reward = rewards_[k];
  t.done = dones_[k] != 0;
  return t;
}

void ReplayBuffer::sample(CounterRng& rng, std::size_t batch, Tensor& states, Tensor& actions,
                          Tensor& next_states) const {
  if (size_ == 0) throw std::invalid_argument("ReplayBuffer::sample: buffer is empty");
  states = Tensor({batch, state_dim_});
  actions = Tensor({batch, action_dim_});
  next_states = Tensor({batch, state_dim_});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t k = static_cast<std::size_t>(rng.below(size_));
    std::copy_n(states_.begin() + k * state_dim_, state_dim_, states.row(b).begin());
    std::copy_n(actions_.begin() + k * action_dim_, action_dim_, actions.row(b).begin());
    std::copy_n(next_states_.begin() + k * state_dim_, state_dim_, next_states.row(b).begin());
  }
}

void ReplayBuffer::save(Archive& ar, const std::string& prefix) const {
  ar.put_u64(prefix + ".capacity", capacity_);
  ar.put_u64(prefix + ".size", size_);
  ar.put_u64(prefix + ".cursor", cursor_);
  if (size_ == 0) return;
  ar.put(prefix + ".states", Tensor({size_, state_dim_}, states_));
  ar.put(prefix + ".actions", Tensor({size_, action_dim_}, actions_));
  ar.put(prefix + ".next_states", Tensor({size_, state_dim_}, next_states_));
  ar.put(prefix + ".rewards", Tensor({size_}, rewards_));
  std::vector<double> d(dones_.begin(), dones_.end());
  ar.put(prefix + ".dones", Tensor({size_}, d));
}

void ReplayBuffer::load(const Archive& ar, const std::string& prefix) {
  if (ar.get_u64(prefix + ".capacity") != capacity_) throw IoError("replay buffer capacity mismatch");
  size_ = ar.get_u64(prefix + ".size");
  cursor_ = ar.get_u64(prefix + ".cursor");
  states_.clear();
  actions_.clear();
  next_states_.clear();
  rewards_.clear();
  dones_.clear();
  if (size_ == 0) return;
  states_ = ar.get(prefix + ".states").storage();
  actions_ = ar.get(prefix + ".actions").storage();
  next_states_ = ar.get(prefix + ".next_states").storage();
  rewards_ = ar.get(prefix + ".rewards").storage();
  for (double v : ar.get(prefix + ".dones").data()) dones_.push_back(v != 0.0 ? 1 : 0);
}

// ---------------------------------------------------------------------------

void RunningStats::update(const Tensor& rows) {
  if (rows.cols() != mean_.size()) throw ShapeError("RunningStats::update: dimension mismatch");
  const std::size_t n = rows.rows();
  if (n == 0) return;
  const std::size_t d = mean_.size();
  std::vector<double> bmean(d, 0.0), bm2(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) bmean[j] += rows.at(r, j);
  }
  for (double& v : bmean) v /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const double e = rows.at(r, j) - bmean[j];
      bm2[j] += e * e;
    }
  }
  const double na = count_;
  const double nb = static_cast<double>(n);
  const double tot = na + nb;
  for (std::size_t j = 0; j < d; ++j) {
    const double delta = bmean[j] - mean_[j];
    mean_[j] += delta * nb / tot;
    m2_[j] += bm2[j] + delta * delta * na * nb / tot;
  }
  count_ = tot;
}

Tensor RunningStats::mean() const { return Tensor::vector(mean_); }

Tensor RunningStats::stddev() const {
  Tensor s = Tensor::filled({mean_.size()}, 1.0);
  if (count_ < 2.0) return s;
  for (std::size_t j = 0; j < mean_.size(); ++j) {
    const double sd = std::sqrt(m2_[j] / count_);
    s[j] = sd > 1e-6 ? sd : 1.0;
  }
  return s;
}

void RunningStats::save(Archive& ar, const std::string& prefix) const {
  ar.put_scalar(prefix + ".count", count_);
  ar.put(prefix + ".mean", Tensor::vector(mean_));
  ar.put(prefix + ".m2", Tensor::vector(m2_));
}

void RunningStats::load(const Archive& ar, const std::string& prefix) {
  count_ = ar.get_scalar(prefix + ".count");
  mean_ = ar.get(prefix + ".mean").storage();
  m2_ = ar.get(prefix + ".m2").storage();
}

// ---------------------------------------------------------------------------

DynamicsModel::DynamicsModel(const Env& env, DynamicsModelConfig cfg, CounterRng& init_rng)
    : env_(&env), cfg_(std::move(cfg)) {
  const std::size_t ds = env.spec().state_dim;
  const std::size_t in = env.feature_dim() + env.spec().action_dim;
  MlpSpec spec{in, cfg_.hidden, 2 * ds, cfg_.act};
  net_ = Mlp(spec, init_rng, 0.0);
  adam_ = Adam(cfg_.adam, net_.params());
  in_stats_ = RunningStats(in);
  delta_stats_ = RunningStats(ds);
  in_mean_ = Tensor({in});
  in_inv_std_ = Tensor::filled({in}, 1.0);
  out_mean_ = Tensor({ds});
  out_std_ = Tensor::filled({ds}, 1.0);
  out_log_std_ = Tensor({ds});
}

DynamicsModel::TapeOutput DynamicsModel::predict_on_tape(Tape& tape, std::span<const NodeId> bound, NodeId s,
                                                         NodeId a) const {
  const std::size_t ds = env_->spec().state_dim;
  const NodeId feats = env_->features(tape, s);
  const NodeId parts[2] = {feats, a};
  NodeId x = tape.concat(parts);
  x = tape.mul(tape.sub(x, tape.constant(in_mean_)), tape.constant(in_inv_std_));
  const NodeId out = net_.forward(tape, bound, x);
  const NodeId delta = tape.add(tape.mul(tape.slice(out, 0, ds), tape.constant(out_std_)), tape.constant(out_mean_));
  const NodeId mean = tape.add(s, delta);
  const NodeId log_std =
      tape.clamp(tape.add(tape.slice(out, ds, 2 * ds), tape.constant(out_log_std_)), cfg_.log_std_min, cfg_.log_std_max);
  return {mean, log_std};
}

NodeId DynamicsModel::mean_on_tape(Tape& tape, NodeId s, NodeId a) const {
  const auto bound = net_.bind_constant(tape);
  return predict_on_tape(tape, bound, s, a).mean;
}

GaussianParams DynamicsModel::predict(const Tensor& states, const Tensor& actions) const {
  if (!states.all_finite() || !actions.all_finite()) {
    throw std::invalid_argument("DynamicsModel::predict: non-finite input");
  }
  Tape tape;
  const auto bound = net_.bind_constant(tape);
  const TapeOutput o = predict_on_tape(tape, bound, tape.constant(states), tape.constant(actions));
  return {tape.value(o.mean), tape.value(o.log_std)};
}

void DynamicsModel::observe(const Tensor& states, const Tensor& actions, const Tensor& next_states) {
  const Tensor feats = env_->features_of(states);
  const std::size_t n = states.rows();
  const std::size_t fd = feats.cols();
  const std::size_t ad = actions.cols();
  Tensor in({n, fd + ad});
  Tensor delta({n, states.cols()});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < fd; ++j) in.at(r, j) = feats.at(r, j);
    for (std::size_t j = 0; j < ad; ++j) in.at(r, fd + j) = actions.at(r, j);
    for (std::size_t j = 0; j < states.cols(); ++j) delta.at(r, j) = next_states.at(r, j) - states.at(r, j);
  }
  in_stats_.update(in);
  delta_stats_.update(delta);
}

void DynamicsModel::freeze_normalization() {
  if (in_stats_.count() < 2.0) return;
  in_mean_ = in_stats_.mean();
  const Tensor sd = in_stats_.stddev();
  for (std::size_t j = 0; j < sd.size(); ++j) in_inv_std_[j] = 1.0 / sd[j];
  out_mean_ = delta_stats_.mean();
  out_std_ = delta_stats_.stddev();
  for (std::size_t j = 0; j < out_std_.size(); ++j) out_log_std_[j] = std::log(out_std_[j]);
}

double DynamicsModel::nll(const Tensor& states, const Tensor& actions, const Tensor& next_states) const {
  Tape tape;
  const auto bound = net_.bind_constant(tape);
  const TapeOutput o = predict_on_tape(tape, bound, tape.constant(states), tape.constant(actions));
  const NodeId loss = tape.gaussian_nll(o.mean, o.log_std, tape.constant(next_states));
  return tape.value(loss).item() / static_cast<double>(states.rows());
}

ModelUpdateResult DynamicsModel::update(const ReplayBuffer& buffer, std::size_t batch_size, std::size_t steps,
                                        double lr, CounterRng& rng) {
  if (buffer.size() == 0) throw std::invalid_argument("DynamicsModel::update: replay buffer is empty");
  if (buffer.size() < batch_size) {
    throw std::invalid_argument("DynamicsModel::update: buffer holds fewer transitions than the batch size");
  }
  freeze_normalization();
  ModelUpdateResult res;
  double total = 0.0;
  Tensor s, a, sn;
  for (std::size_t k = 0; k < steps; ++k) {
    buffer.sample(rng, batch_size, s, a, sn);
    Tape tape;
    const auto bound = net_.bind(tape);
    const TapeOutput o = predict_on_tape(tape, bound, tape.constant(s), tape.constant(a));
    const NodeId nll = tape.gaussian_nll(o.mean, o.log_std, tape.constant(sn));
    const NodeId loss = tape.scale(nll, 1.0 / static_cast<double>(batch_size));
    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) throw DivergenceError("dynamics model NLL is not finite");
    total += value;
    const auto grads = gather_grads(tape.backward(loss), bound);
    adam_.step(net_.params(), grads, lr);
  }
  res.steps = steps;
  res.mean_nll = steps ? total / static_cast<double>(steps) : 0.0;
  return res;
}

void DynamicsModel::save(Archive& ar, const std::string& prefix) const {
  const auto& sp = net_.spec();
  std::vector<double> dims{static_cast<double>(sp.in), static_cast<double>(sp.out)};
  for (std::size_t h : sp.hidden) dims.push_back(static_cast<double>(h));
  ar.put(prefix + ".dims", Tensor::vector(dims));
  ar.put_tensors(prefix + ".params", net_.params());
  ar.put_tensors(prefix + ".adam.m", adam_.first_moment());
  ar.put_tensors(prefix + ".adam.v", adam_.second_moment());
  ar.put_u64(prefix + ".adam.t", adam_.step_count());
  in_stats_.save(ar, prefix + ".in_stats");
  delta_stats_.save(ar, prefix + ".delta_stats");
  ar.put(prefix + ".norm.in_mean", in_mean_);
  ar.put(prefix + ".norm.in_inv_std", in_inv_std_);
  ar.put(prefix + ".norm.out_mean", out_mean_);
  ar.put(prefix + ".norm.out_std", out_std_);
}

void DynamicsModel::load(const Archive& ar, const std::string& prefix) {
  auto params = ar.get_tensors(prefix + ".params");
  if (params.size() != net_.params().size()) throw IoError("dynamics model architecture mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != net_.params()[i].shape()) throw IoError("dynamics model architecture mismatch");
  }
  net_.params() = std::move(params);
  adam_.first_moment() = ar.get_tensors(prefix + ".adam.m");
  adam_.second_moment() = ar.get_tensors(prefix + ".adam.v");
  adam_.step_count() = ar.get_u64(prefix + ".adam.t");
  in_stats_.load(ar, prefix + ".in_stats");
  delta_stats_.load(ar, prefix + ".delta_stats");
  in_mean_ = ar.get(prefix + ".norm.in_mean");
  in_inv_std_ = ar.get(prefix + ".norm.in_inv_std");
  out_mean_ = ar.get(prefix + ".norm.out_mean");
  out_std_ = ar.get(prefix + ".norm.out_std");
  for (std::size_t j = 0; j < out_std_.size(); ++j) out_log_std_[j] = std::log(out_std_[j]);
}

// ---------------------------------------------------------------------------

LinearModel::LinearModel(std::size_t state_dim, std::size_t action_dim)
    : a_({state_dim, state_dim}), b_({action_dim, state_dim}), c_({state_dim}) {
  for (std::size_t i = 0; i < state_dim; ++i) a_.at(i, i) = 1.0;
}

double LinearModel::fit(const Tensor& states, const Tensor& actions, const Tensor& next_states) {
  const std::size_t n = states.rows();
  const std::size_t ds = a_.rows();
  const std::size_t da = b_.rows();
  if (states.cols() != ds || actions.cols() != da || next_states.cols() != ds || actions.rows() != n ||
      next_states.rows() != n) {
    throw ShapeError("LinearModel::fit: transition shapes do not match the model");
  }
  if (n < ds + da + 1) throw std::invalid_argument("LinearModel::fit: too few transitions for a unique fit");
  Eigen::MatrixXd x(n, ds + da + 1);
  Eigen::MatrixXd y(n, ds);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ds; ++j) x(r, j) = states.at(r, j);
    for (std::size_t j = 0; j < da; ++j) x(r, ds + j) = actions.at(r, j);
    x(r, ds + da) = 1.0;
    for (std::size_t j = 0; j < ds; ++j) y(r, j) = next_states.at(r, j);
  }
  const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
  for (std::size_t i = 0; i < ds; ++i) {
    for (std::size_t j = 0; j < ds; ++j) a_.at(i, j) = w(i, j);
  }
  for (std::size_t i = 0; i < da; ++i) {
    for (std::size_t j = 0; j < ds; ++j) b_.at(i, j) = w(ds + i, j);
  }
  for (std::size_t j = 0; j < ds; ++j) c_[j] = w(ds + da, j);
  return ((x * w) - y).cwiseAbs().maxCoeff();
}

NodeId LinearModel::mean_on_tape(Tape& tape, NodeId s, NodeId a) const {
  const NodeId lin = tape.add(tape.matmul(s, tape.constant(a_)), tape.matmul(a, tape.constant(b_)));
  return tape.add(lin, tape.constant(c_));
}

}  // namespace dmo

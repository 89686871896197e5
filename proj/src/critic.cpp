#include "dmo/critic.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dmo/errors.hpp"

namespace dmo {

ValueTargetBatch td_lambda_targets(const Tensor& rewards, const Tensor& values, std::span<const std::uint8_t> dones,
                                   double gamma, double lambda) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("td_lambda_targets: gamma must be in (0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("td_lambda_targets: lambda must be in [0, 1]");
  if (rewards.rank() != 2 || values.rank() != 2) throw ShapeError("td_lambda_targets: expected matrices");
  const std::size_t H = rewards.shape()[0];
  const std::size_t N = rewards.shape()[1];
  if (values.shape()[0] != H + 1 || values.shape()[1] != N || dones.size() != H * N) {
    throw ShapeError("td_lambda_targets: rewards " + shape_str(rewards.shape()) + ", values " +
                     shape_str(values.shape()) + ", dones " + std::to_string(dones.size()) + " are inconsistent");
  }
  ValueTargetBatch out{Tensor({H, N}), std::vector<std::uint8_t>(dones.begin(), dones.end())};
  for (std::size_t col = 0; col < N; ++col) {
    double next_target = 0.0;
    for (std::size_t t = H; t-- > 0;) {
      const double r = rewards.at(t, col);
      double g;
      if (dones[t * N + col]) {
        g = r;
      } else if (t + 1 == H) {
        g = r + gamma * values.at(t + 1, col);
      } else {
        g = r + gamma * ((1.0 - lambda) * values.at(t + 1, col) + lambda * next_target);
      }
      out.targets.at(t, col) = g;
      next_target = g;
    }
  }
  return out;
}

Critic::Critic(std::size_t feature_dim, CriticConfig cfg, CounterRng& init_rng) : cfg_(std::move(cfg)) {
  if (cfg_.ensemble == 0) throw std::invalid_argument("Critic: ensemble size must be at least 1");
  if (!(cfg_.tau > 0.0 && cfg_.tau <= 1.0)) throw std::invalid_argument("Critic: tau must be in (0, 1]");
  for (std::size_t i = 0; i < cfg_.ensemble; ++i) heads_.emplace_back(MlpSpec{feature_dim, cfg_.hidden, 1, cfg_.act}, init_rng);
  if (cfg_.use_target) targets_ = heads_;
  std::vector<Tensor> all;
  for (const Mlp& h : heads_) all.insert(all.end(), h.params().begin(), h.params().end());
  adam_ = Adam(cfg_.adam, all);
}

NodeId Critic::value_on_tape(Tape& tape, NodeId features, bool target) const {
  const auto& hs = pick(target);
  NodeId v{};
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const auto bound = hs[i].bind_constant(tape);
    const NodeId hv = hs[i].forward(tape, bound, features);
    v = i == 0 ? hv : tape.minimum(v, hv);
  }
  return v;
}

Tensor Critic::head_values(const Tensor& features, bool target) const {
  const auto& hs = pick(target);
  const std::size_t n = features.rows();
  Tensor out({hs.size(), n});
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const Tensor v = hs[i].evaluate(features);
    for (std::size_t r = 0; r < n; ++r) out.at(i, r) = v[r];
  }
  return out;
}

Tensor Critic::values(const Tensor& features, bool target) const {
  const Tensor hv = head_values(features, target);
  const std::size_t n = hv.cols();
  Tensor out({n});
  for (std::size_t r = 0; r < n; ++r) {
    double m = hv.at(0, r);
    for (std::size_t i = 1; i < hv.shape()[0]; ++i) m = hv.at(i, r) < m ? hv.at(i, r) : m;
    out[r] = m;
  }
  return out;
}

double Critic::ensemble_value(std::span<const double> features) const {
  return values(Tensor::matrix(1, features.size(), {features.begin(), features.end()}), false)[0];
}

CriticUpdateResult Critic::update(const Tensor& features, const Tensor& targets, double lr, std::size_t mini_epochs,
                                  CounterRng& rng) {
  const std::size_t m = features.rows();
  if (targets.size() != m) {
    throw ShapeError("Critic::update: " + std::to_string(m) + " states but " + std::to_string(targets.size()) +
                     " targets");
  }
  const std::size_t fd = features.cols();
  const std::size_t batches = std::max<std::size_t>(1, std::min(cfg_.minibatches, m));
  std::vector<std::size_t> order(m);
  CriticUpdateResult res;
  double total = 0.0;

  for (std::size_t epoch = 0; epoch < mini_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * m / batches;
      const std::size_t hi = (b + 1) * m / batches;
      const std::size_t bs = hi - lo;
      Tensor x({bs, fd});
      Tensor y({bs, 1});
      for (std::size_t k = 0; k < bs; ++k) {
        const std::size_t src = order[lo + k];
        std::copy(features.row(src).begin(), features.row(src).end(), x.row(k).begin());
        y[k] = targets[src];
      }
      Tape tape;
      const NodeId xn = tape.constant(std::move(x));
      const NodeId yn = tape.constant(std::move(y));
      std::vector<std::vector<NodeId>> bound;
      NodeId loss{};
      for (std::size_t h = 0; h < heads_.size(); ++h) {
        bound.push_back(heads_[h].bind(tape));
        const NodeId err = tape.mean(tape.square(tape.sub(heads_[h].forward(tape, bound.back(), xn), yn)));
        loss = h == 0 ? err : tape.add(loss, err);
      }
      const double lv = tape.value(loss).item();
      if (!std::isfinite(lv)) throw DivergenceError("critic loss is not finite");
      total += lv / static_cast<double>(heads_.size());
      ++res.steps;
      const GradientMap gm = tape.backward(loss);
      std::vector<Tensor> params, grads;
      for (std::size_t h = 0; h < heads_.size(); ++h) {
        auto g = gather_grads(gm, bound[h]);
        grads.insert(grads.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
        params.insert(params.end(), heads_[h].params().begin(), heads_[h].params().end());
      }
      adam_.step(params, grads, lr);
      std::size_t k = 0;
      for (Mlp& head : heads_) {
        for (Tensor& p : head.params()) p = std::move(params[k++]);
      }
    }
  }
  if (cfg_.use_target) {
    for (std::size_t h = 0; h < heads_.size(); ++h) polyak_update(targets_[h].params(), heads_[h].params(), cfg_.tau);
  }
  res.mean_loss = res.steps ? total / static_cast<double>(res.steps) : 0.0;
  return res;
}

void Critic::save(Archive& ar, const std::string& prefix) const {
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    ar.put_tensors(prefix + ".head" + std::to_string(h), heads_[h].params());
    if (cfg_.use_target) ar.put_tensors(prefix + ".target" + std::to_string(h), targets_[h].params());
  }
  ar.put_tensors(prefix + ".adam.m", adam_.first_moment());
  ar.put_tensors(prefix + ".adam.v", adam_.second_moment());
  ar.put_u64(prefix + ".adam.t", adam_.step_count());
}

void Critic::load(const Archive& ar, const std::string& prefix) {
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    heads_[h].params() = ar.get_tensors(prefix + ".head" + std::to_string(h));
    if (cfg_.use_target) targets_[h].params() = ar.get_tensors(prefix + ".target" + std::to_string(h));
  }
  adam_.first_moment() = ar.get_tensors(prefix + ".adam.m");
  adam_.second_moment() = ar.get_tensors(prefix + ".adam.v");
  adam_.step_count() = ar.get_u64(prefix + ".adam.t");
}

}  // namespace dmo

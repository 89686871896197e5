#pragma once

// Independent reference computations used by unit and acceptance tests:
// central finite differences, brute-force lambda-returns, and randomized
// per-op gradient cases.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmo/nn.hpp"
#include "dmo/rng.hpp"
#include "dmo/tape.hpp"

namespace dmo::testing {

using Builder = std::function<NodeId(Tape&, std::span<const NodeId>)>;

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

inline Tensor random_tensor(CounterRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Scalar objective sum(weights * build(inputs)) evaluated on a fresh tape.
inline double weighted_output(const Builder& build, const std::vector<Tensor>& inputs, const Tensor& weights) {
  Tape tape;
  std::vector<NodeId> ids;
  for (const Tensor& t : inputs) ids.push_back(tape.constant(t));
  const Tensor& out = tape.value(build(tape, ids));
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
  return s;
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
};

// Compares tape gradients of sum(W * build(inputs)) against central
// differences for every input entry.
inline GradCheck gradcheck(const Builder& build, const std::vector<Tensor>& inputs, CounterRng& rng,
                           double eps = 1e-5) {
  Tape tape;
  std::vector<NodeId> ids;
  for (const Tensor& t : inputs) ids.push_back(tape.leaf(t));
  const NodeId out = build(tape, ids);
  const Tensor weights = random_tensor(rng, tape.value(out).shape(), 0.5, 1.5);
  const NodeId loss = tape.sum(tape.mul(out, tape.constant(weights)));
  const GradientMap grads = tape.backward(loss);

  GradCheck res;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = grads.grad(ids[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + eps;
      const double up = weighted_output(build, probe, weights);
      probe[k][i] = x0 - eps;
      const double down = weighted_output(build, probe, weights);
      probe[k][i] = x0;
      const double fd = (up - down) / (2.0 * eps);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(g[i], fd));
      ++res.entries;
    }
  }
  return res;
}

struct OpCase {
  std::string name;
  Builder build;
  std::vector<Tensor> inputs;
};

inline std::vector<std::string> differentiable_ops() {
  return {"add",       "add_scalar_rhs", "add_row_rhs", "sub",     "mul",      "mul_row_rhs", "div",
          "minimum",   "matmul_mm",      "matmul_mv",   "matmul_vm", "sum",    "mean",        "row_sum",
          "neg",       "exp",            "log",         "tanh",    "sin",      "cos",         "elu",
          "silu",      "softplus",       "square",      "scale",   "add_scalar", "clamp",     "concat",
          "slice",     "row_select",     "reparam_sample", "gaussian_nll"};
}

// A randomized instance of `op` away from kinks and ties.
inline OpCase make_op_case(const std::string& op, CounterRng& rng) {
  const std::size_t r = 1 + rng.below(4);
  const std::size_t c = 1 + rng.below(4);
  const std::size_t k = 1 + rng.below(4);
  auto mat = [&](std::size_t a, std::size_t b, double lo = -1.0, double hi = 1.0) {
    return random_tensor(rng, {a, b}, lo, hi);
  };
  auto unary = [&](auto fn, Tensor x) {
    return OpCase{op, [fn](Tape& t, std::span<const NodeId> in) { return fn(t, in[0]); }, {std::move(x)}};
  };
  auto binary = [&](auto fn, Tensor x, Tensor y) {
    return OpCase{op, [fn](Tape& t, std::span<const NodeId> in) { return fn(t, in[0], in[1]); },
                  {std::move(x), std::move(y)}};
  };
  auto away_from_zero = [&](std::size_t a, std::size_t b) {
    Tensor t = mat(a, b, 0.2, 1.5);
    for (double& v : t.storage()) v = rng.uniform() < 0.5 ? -v : v;
    return t;
  };

  if (op == "add") return binary([](Tape& t, NodeId x, NodeId y) { return t.add(x, y); }, mat(r, c), mat(r, c));
  if (op == "add_scalar_rhs") {
    return binary([](Tape& t, NodeId x, NodeId y) { return t.add(x, y); }, mat(r, c),
                  random_tensor(rng, {1}));
  }
  if (op == "add_row_rhs") {
    return binary([](Tape& t, NodeId x, NodeId y) { return t.add(x, y); }, mat(r, c), random_tensor(rng, {c}));
  }
  if (op == "sub") return binary([](Tape& t, NodeId x, NodeId y) { return t.sub(x, y); }, mat(r, c), mat(r, c));
  if (op == "mul") return binary([](Tape& t, NodeId x, NodeId y) { return t.mul(x, y); }, mat(r, c), mat(r, c));
  if (op == "mul_row_rhs") {
    return binary([](Tape& t, NodeId x, NodeId y) { return t.mul(x, y); }, mat(r, c), random_tensor(rng, {c}));
  }
  if (op == "div") {
    return binary([](Tape& t, NodeId x, NodeId y) { return t.div(x, y); }, mat(r, c), away_from_zero(r, c));
  }
  if (op == "minimum") {
    Tensor x = mat(r, c);
    Tensor y = mat(r, c);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::fabs(x[i] - y[i]) < 0.1) y[i] = x[i] + 0.3;
    }
    return binary([](Tape& t, NodeId a, NodeId b) { return t.minimum(a, b); }, std::move(x), std::move(y));
  }
  if (op == "matmul_mm") {
    return binary([](Tape& t, NodeId x, NodeId y) { return t.matmul(x, y); }, mat(r, k), mat(k, c));
  }
  if (op == "matmul_mv") {
    return binary([](Tape& t, NodeId x, NodeId y) { return t.matmul(x, y); }, mat(r, k), random_tensor(rng, {k}));
  }
  if (op == "matmul_vm") {
    return binary([](Tape& t, NodeId x, NodeId y) { return t.matmul(x, y); }, random_tensor(rng, {k}), mat(k, c));
  }
  if (op == "sum") return unary([](Tape& t, NodeId x) { return t.sum(x); }, mat(r, c));
  if (op == "mean") return unary([](Tape& t, NodeId x) { return t.mean(x); }, mat(r, c));
  if (op == "row_sum") return unary([](Tape& t, NodeId x) { return t.row_sum(x); }, mat(r, c));
  if (op == "neg") return unary([](Tape& t, NodeId x) { return t.neg(x); }, mat(r, c));
  if (op == "exp") return unary([](Tape& t, NodeId x) { return t.exp(x); }, mat(r, c, -2.0, 2.0));
  if (op == "log") return unary([](Tape& t, NodeId x) { return t.log(x); }, mat(r, c, 0.2, 3.0));
  if (op == "tanh") return unary([](Tape& t, NodeId x) { return t.tanh(x); }, mat(r, c, -2.0, 2.0));
  if (op == "sin") return unary([](Tape& t, NodeId x) { return t.sin(x); }, mat(r, c, -3.0, 3.0));
  if (op == "cos") return unary([](Tape& t, NodeId x) { return t.cos(x); }, mat(r, c, -3.0, 3.0));
  if (op == "elu") return unary([](Tape& t, NodeId x) { return t.elu(x); }, away_from_zero(r, c));
  if (op == "silu") return unary([](Tape& t, NodeId x) { return t.silu(x); }, mat(r, c, -4.0, 4.0));
  if (op == "softplus") return unary([](Tape& t, NodeId x) { return t.softplus(x); }, mat(r, c, -4.0, 4.0));
  if (op == "square") return unary([](Tape& t, NodeId x) { return t.square(x); }, mat(r, c));
  if (op == "scale") {
    const double f = rng.uniform(-2.0, 2.0);
    return unary([f](Tape& t, NodeId x) { return t.scale(x, f); }, mat(r, c));
  }
  if (op == "add_scalar") {
    const double v = rng.uniform(-2.0, 2.0);
    return unary([v](Tape& t, NodeId x) { return t.add_scalar(x, v); }, mat(r, c));
  }
  if (op == "clamp") {
    Tensor x = mat(r, c, -2.0, 2.0);
    for (double& v : x.storage()) {
      if (std::fabs(std::fabs(v) - 1.0) < 0.05) v *= 0.8;
    }
    return unary([](Tape& t, NodeId a) { return t.clamp(a, -1.0, 1.0); }, std::move(x));
  }
  if (op == "concat") {
    return binary(
        [](Tape& t, NodeId x, NodeId y) {
          const NodeId parts[2] = {x, y};
          return t.concat(parts);
        },
        mat(r, c), mat(r, k));
  }
  if (op == "slice") {
    const std::size_t b = rng.below(c);
    const std::size_t e = b + 1 + rng.below(c - b);
    return unary([b, e](Tape& t, NodeId x) { return t.slice(x, b, e); }, mat(r, c));
  }
  if (op == "row_select") {
    std::vector<std::uint8_t> mask(r);
    for (auto& m : mask) m = rng.uniform() < 0.5;
    return binary([mask](Tape& t, NodeId x, NodeId y) { return t.row_select(mask, x, y); }, mat(r, c), mat(r, c));
  }
  if (op == "reparam_sample") {
    const Tensor noise = random_tensor(rng, {r, c}, -2.0, 2.0);
    return binary([noise](Tape& t, NodeId m, NodeId ls) { return t.reparam_sample(m, ls, noise); }, mat(r, c),
                  mat(r, c));
  }
  if (op == "gaussian_nll") {
    OpCase oc{op,
              [](Tape& t, std::span<const NodeId> in) { return t.gaussian_nll(in[0], in[1], in[2]); },
              {mat(r, c), mat(r, c), mat(r, c)}};
    return oc;
  }
  throw std::invalid_argument("unknown op case " + op);
}

// Brute-force lambda-return by explicit enumeration of every h-step return.
// A done at step n truncates every return that reaches it (no bootstrap past n).
inline double lambda_return_bruteforce(const std::vector<double>& rewards, const std::vector<double>& values,
                                       const std::vector<int>& dones, std::size_t t, double gamma, double lambda) {
  const std::size_t H = rewards.size();
  auto h_step = [&](std::size_t h) {
    double g = 0.0;
    double disc = 1.0;
    for (std::size_t n = t; n < t + h; ++n) {
      g += disc * rewards[n];
      disc *= gamma;
      if (dones[n]) return g;
    }
    return g + disc * values[t + h];
  };
  const std::size_t last = H - t;
  double target = 0.0;
  for (std::size_t h = 1; h + 1 <= last; ++h) target += (1.0 - lambda) * std::pow(lambda, double(h - 1)) * h_step(h);
  target += std::pow(lambda, double(last - 1)) * h_step(last);
  return target;
}

}  // namespace dmo::testing

#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape is an append-only list of nodes in topological order. Each node
// caches its forward value at record time; backward() walks the tape once in
// reverse and accumulates adjoints. Tapes are rebuilt per optimization window
// and are not shared between threads.

#include <compare>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dmo/tensor.hpp"

namespace dmo {

enum class OpKind : std::uint8_t {
  constant,
  leaf,
  add,
  sub,
  mul,
  div,
  minimum,
  matmul,
  sum,
  mean,
  row_sum,
  neg,
  exp,
  log,
  tanh,
  sin,
  cos,
  elu,
  silu,
  softplus,
  square,
  scale,
  add_scalar,
  clamp,
  concat,
  slice,
  row_select,
  reparam_sample,
  gaussian_nll,
  grad_swap,
};

std::string_view op_name(OpKind op);

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(NodeId, NodeId) = default;
};

// Op parameters that are not tape nodes.
struct OpAttrs {
  double a = 0.0;  // scale factor, additive constant, clamp lower bound
  double b = 0.0;  // clamp upper bound
  std::size_t begin = 0;  // slice
  std::size_t end = 0;
  Tensor aux;  // reparam_sample noise
  std::vector<std::uint8_t> mask;  // row_select: 1 takes the row from input 0
};

struct Node {
  OpKind op;
  std::vector<NodeId> inputs;
  Tensor value;
  OpAttrs attrs;
  bool requires_grad = false;
};

class GradientMap {
 public:
  GradientMap() = default;
  GradientMap(std::vector<Tensor> adjoints, std::vector<Shape> shapes)
      : adjoints_(std::move(adjoints)), shapes_(std::move(shapes)) {}

  // Adjoint of a node; zeros when the node was not reached.
  Tensor grad(NodeId id) const;
  const Tensor* find(NodeId id) const;
  bool touched(NodeId id) const { return find(id) != nullptr; }

 private:
  std::vector<Tensor> adjoints_;
  std::vector<Shape> shapes_;
};

class Tape {
 public:
  Tape() = default;

  // Records `op` over `inputs`, computing the forward value. Throws ShapeError
  // naming the op and operand shapes when the contract is violated.
  NodeId record(OpKind op, std::span<const NodeId> inputs, OpAttrs attrs = {});

  // A value without gradient history.
  NodeId constant(Tensor value);
  // A differentiable input (parameters, or states under test).
  NodeId leaf(Tensor value);

  NodeId add(NodeId x, NodeId y) { return binary(OpKind::add, x, y); }
  NodeId sub(NodeId x, NodeId y) { return binary(OpKind::sub, x, y); }
  NodeId mul(NodeId x, NodeId y) { return binary(OpKind::mul, x, y); }
  NodeId div(NodeId x, NodeId y) { return binary(OpKind::div, x, y); }
  NodeId minimum(NodeId x, NodeId y) { return binary(OpKind::minimum, x, y); }
  NodeId matmul(NodeId x, NodeId y) { return binary(OpKind::matmul, x, y); }

  NodeId sum(NodeId x) { return unary(OpKind::sum, x); }
  NodeId mean(NodeId x) { return unary(OpKind::mean, x); }
  NodeId row_sum(NodeId x) { return unary(OpKind::row_sum, x); }
  NodeId neg(NodeId x) { return unary(OpKind::neg, x); }
  NodeId exp(NodeId x) { return unary(OpKind::exp, x); }
  NodeId log(NodeId x) { return unary(OpKind::log, x); }
  NodeId tanh(NodeId x) { return unary(OpKind::tanh, x); }
  NodeId sin(NodeId x) { return unary(OpKind::sin, x); }
  NodeId cos(NodeId x) { return unary(OpKind::cos, x); }
  NodeId elu(NodeId x) { return unary(OpKind::elu, x); }
  NodeId silu(NodeId x) { return unary(OpKind::silu, x); }
  NodeId softplus(NodeId x) { return unary(OpKind::softplus, x); }
  NodeId square(NodeId x) { return unary(OpKind::square, x); }

  NodeId scale(NodeId x, double factor);
  NodeId add_scalar(NodeId x, double c);
  NodeId clamp(NodeId x, double lo, double hi);
  // Concatenation / slicing along the last dimension.
  NodeId concat(std::span<const NodeId> parts);
  NodeId slice(NodeId x, std::size_t begin, std::size_t end);
  // Row r of the result is row r of `on_true` if mask[r] else of `on_false`.
  NodeId row_select(std::span<const std::uint8_t> mask, NodeId on_true, NodeId on_false);

  // mean + exp(log_std) * noise; the noise carries no gradient.
  NodeId reparam_sample(NodeId mean, NodeId log_std, const Tensor& noise);
  // Sum over elements of log_std + ((target - mean) / exp(log_std))^2 / 2 + log(2 pi) / 2.
  NodeId gaussian_nll(NodeId mean, NodeId log_std, NodeId target);

  // Forward value is a copy of `real`; backward sends the full adjoint to
  // `predicted` and nothing to `real`.
  NodeId grad_swap(NodeId predicted, const Tensor& real);
  NodeId grad_swap(NodeId predicted, NodeId real);

  // Reverse sweep from a scalar root. The root adjoint is 1.
  GradientMap backward(NodeId root) const;

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& leaf_ids() const { return leaves_; }

 private:
  NodeId unary(OpKind op, NodeId x) { return record(op, std::span<const NodeId>(&x, 1)); }
  NodeId binary(OpKind op, NodeId x, NodeId y) {
    const NodeId in[2] = {x, y};
    return record(op, in);
  }
  NodeId push(OpKind op, std::vector<NodeId> inputs, Tensor value, OpAttrs attrs);

  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
};

}  // namespace dmo

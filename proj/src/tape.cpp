#include "dmo/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dmo/errors.hpp"
#include "dmo/kernels.hpp"

namespace dmo {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::constant: return "constant";
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::minimum: return "minimum";
    case OpKind::matmul: return "matmul";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::row_sum: return "row_sum";
    case OpKind::neg: return "neg";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::tanh: return "tanh";
    case OpKind::sin: return "sin";
    case OpKind::cos: return "cos";
    case OpKind::elu: return "elu";
    case OpKind::silu: return "silu";
    case OpKind::softplus: return "softplus";
    case OpKind::square: return "square";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::clamp: return "clamp";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::row_select: return "row_select";
    case OpKind::reparam_sample: return "reparam_sample";
    case OpKind::gaussian_nll: return "gaussian_nll";
    case OpKind::grad_swap: return "grad_swap";
  }
  return "?";
}

Tensor GradientMap::grad(NodeId id) const {
  if (const Tensor* t = find(id)) return *t;
  return Tensor(shapes_.at(id.index));
}

const Tensor* GradientMap::find(NodeId id) const {
  if (id.index >= adjoints_.size() || adjoints_[id.index].size() == 0) return nullptr;
  return &adjoints_[id.index];
}

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2 pi) / 2

[[noreturn]] void shape_fail(OpKind op, std::span<const Tensor* const> operands, const std::string& why) {
  std::string msg = std::string(op_name(op)) + ": " + why + " [";
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (i) msg += ", ";
    msg += shape_str(operands[i]->shape());
  }
  throw ShapeError(msg + "]");
}

enum class Broadcast { none, scalar, row };

Broadcast broadcast_mode(OpKind op, const Tensor& x, const Tensor& y) {
  if (x.shape() == y.shape()) return Broadcast::none;
  if (y.size() == 1 && y.rank() <= 1) return Broadcast::scalar;
  if (y.rank() == 1 && x.rank() >= 2 && y.cols() == x.cols()) return Broadcast::row;
  const Tensor* ops[2] = {&x, &y};
  shape_fail(op, ops, "operand shapes are not broadcast compatible");
}

inline std::size_t rhs_index(Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::none: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::row: return i % cols;
  }
  return i;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

struct MatmulDims {
  std::size_t m, k, n;
  Shape out;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  const Tensor* ops[2] = {&a, &b};
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.shape()[1] != b.shape()[0]) shape_fail(OpKind::matmul, ops, "inner dimensions differ");
    return {a.shape()[0], a.shape()[1], b.shape()[1], {a.shape()[0], b.shape()[1]}};
  }
  if (a.rank() == 2 && b.rank() == 1) {
    if (a.shape()[1] != b.shape()[0]) shape_fail(OpKind::matmul, ops, "inner dimensions differ");
    return {a.shape()[0], a.shape()[1], 1, {a.shape()[0]}};
  }
  if (a.rank() == 1 && b.rank() == 2) {
    if (a.shape()[0] != b.shape()[0]) shape_fail(OpKind::matmul, ops, "inner dimensions differ");
    return {1, a.shape()[0], b.shape()[1], {b.shape()[1]}};
  }
  shape_fail(OpKind::matmul, ops, "expected (m,k)x(k,n), (m,k)x(k,) or (k,)x(k,n)");
}

Tensor unary_forward(OpKind op, const Tensor& x, const OpAttrs& attrs) {
  Tensor y(x.shape());
  const std::size_t n = x.size();
  const double* xs = x.ptr();
  double* ys = y.ptr();
  switch (op) {
    case OpKind::neg: for (std::size_t i = 0; i < n; ++i) ys[i] = -xs[i]; break;
    case OpKind::exp: for (std::size_t i = 0; i < n; ++i) ys[i] = std::exp(xs[i]); break;
    case OpKind::log: for (std::size_t i = 0; i < n; ++i) ys[i] = std::log(xs[i]); break;
    case OpKind::tanh: for (std::size_t i = 0; i < n; ++i) ys[i] = std::tanh(xs[i]); break;
    case OpKind::sin: for (std::size_t i = 0; i < n; ++i) ys[i] = std::sin(xs[i]); break;
    case OpKind::cos: for (std::size_t i = 0; i < n; ++i) ys[i] = std::cos(xs[i]); break;
    case OpKind::elu:
      for (std::size_t i = 0; i < n; ++i) ys[i] = xs[i] > 0.0 ? xs[i] : std::expm1(xs[i]);
      break;
    case OpKind::silu: for (std::size_t i = 0; i < n; ++i) ys[i] = xs[i] * sigmoid(xs[i]); break;
    case OpKind::softplus: for (std::size_t i = 0; i < n; ++i) ys[i] = softplus_value(xs[i]); break;
    case OpKind::square: for (std::size_t i = 0; i < n; ++i) ys[i] = xs[i] * xs[i]; break;
    case OpKind::scale: for (std::size_t i = 0; i < n; ++i) ys[i] = attrs.a * xs[i]; break;
    case OpKind::add_scalar: for (std::size_t i = 0; i < n; ++i) ys[i] = xs[i] + attrs.a; break;
    case OpKind::clamp:
      for (std::size_t i = 0; i < n; ++i) ys[i] = std::clamp(xs[i], attrs.a, attrs.b);
      break;
    default: break;
  }
  return y;
}

bool is_unary_elementwise(OpKind op) {
  switch (op) {
    case OpKind::neg:
    case OpKind::exp:
    case OpKind::log:
    case OpKind::tanh:
    case OpKind::sin:
    case OpKind::cos:
    case OpKind::elu:
    case OpKind::silu:
    case OpKind::softplus:
    case OpKind::square:
    case OpKind::scale:
    case OpKind::add_scalar:
    case OpKind::clamp:
      return true;
    default:
      return false;
  }
}

bool is_binary_elementwise(OpKind op) {
  return op == OpKind::add || op == OpKind::sub || op == OpKind::mul || op == OpKind::div ||
         op == OpKind::minimum;
}

std::size_t expected_arity(OpKind op) {
  if (is_unary_elementwise(op)) return 1;
  if (is_binary_elementwise(op)) return 2;
  switch (op) {
    case OpKind::constant:
    case OpKind::leaf: return 0;
    case OpKind::matmul:
    case OpKind::row_select:
    case OpKind::grad_swap:
    case OpKind::reparam_sample: return 2;
    case OpKind::sum:
    case OpKind::mean:
    case OpKind::row_sum:
    case OpKind::slice: return 1;
    case OpKind::gaussian_nll: return 3;
    default: return 0;
  }
}

}  // namespace

NodeId Tape::push(OpKind op, std::vector<NodeId> inputs, Tensor value, OpAttrs attrs) {
  bool rg = op == OpKind::leaf;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    // the real input of grad_swap never carries gradient
    if (op == OpKind::grad_swap && i == 1) continue;
    rg = rg || nodes_[inputs[i].index].requires_grad;
  }
  const NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), std::move(attrs), rg});
  if (op == OpKind::leaf) leaves_.push_back(id);
  return id;
}

NodeId Tape::constant(Tensor value) { return push(OpKind::constant, {}, std::move(value), {}); }

NodeId Tape::leaf(Tensor value) { return push(OpKind::leaf, {}, std::move(value), {}); }

NodeId Tape::scale(NodeId x, double factor) {
  OpAttrs a;
  a.a = factor;
  return record(OpKind::scale, std::span<const NodeId>(&x, 1), std::move(a));
}

NodeId Tape::add_scalar(NodeId x, double c) {
  OpAttrs a;
  a.a = c;
  return record(OpKind::add_scalar, std::span<const NodeId>(&x, 1), std::move(a));
}

NodeId Tape::clamp(NodeId x, double lo, double hi) {
  OpAttrs a;
  a.a = lo;
  a.b = hi;
  return record(OpKind::clamp, std::span<const NodeId>(&x, 1), std::move(a));
}

NodeId Tape::concat(std::span<const NodeId> parts) { return record(OpKind::concat, parts); }

NodeId Tape::slice(NodeId x, std::size_t begin, std::size_t end) {
  OpAttrs a;
  a.begin = begin;
  a.end = end;
  return record(OpKind::slice, std::span<const NodeId>(&x, 1), std::move(a));
}

NodeId Tape::row_select(std::span<const std::uint8_t> mask, NodeId on_true, NodeId on_false) {
  OpAttrs a;
  a.mask.assign(mask.begin(), mask.end());
  const NodeId in[2] = {on_true, on_false};
  return record(OpKind::row_select, in, std::move(a));
}

NodeId Tape::reparam_sample(NodeId mean, NodeId log_std, const Tensor& noise) {
  OpAttrs a;
  a.aux = noise;
  const NodeId in[2] = {mean, log_std};
  return record(OpKind::reparam_sample, in, std::move(a));
}

NodeId Tape::gaussian_nll(NodeId mean, NodeId log_std, NodeId target) {
  const NodeId in[3] = {mean, log_std, target};
  return record(OpKind::gaussian_nll, in);
}

NodeId Tape::grad_swap(NodeId predicted, const Tensor& real) {
  const NodeId r = constant(real);
  return grad_swap(predicted, r);
}

NodeId Tape::grad_swap(NodeId predicted, NodeId real) {
  const NodeId in[2] = {predicted, real};
  return record(OpKind::grad_swap, in);
}

NodeId Tape::record(OpKind op, std::span<const NodeId> inputs, OpAttrs attrs) {
  for (NodeId id : inputs) {
    if (id.index >= nodes_.size()) {
      throw std::out_of_range(std::string(op_name(op)) + ": input node " + std::to_string(id.index) +
                              " is not on the tape");
    }
  }
  if (op == OpKind::constant || op == OpKind::leaf) {
    throw std::invalid_argument("record: use Tape::constant / Tape::leaf for source nodes");
  }
  if (op != OpKind::concat && inputs.size() != expected_arity(op)) {
    throw std::invalid_argument(std::string(op_name(op)) + ": expected " +
                                std::to_string(expected_arity(op)) + " inputs, got " +
                                std::to_string(inputs.size()));
  }
  std::vector<const Tensor*> vals;
  vals.reserve(inputs.size());
  for (NodeId id : inputs) vals.push_back(&nodes_[id.index].value);

  Tensor out;
  if (is_unary_elementwise(op)) {
    out = unary_forward(op, *vals[0], attrs);
  } else if (is_binary_elementwise(op)) {
    const Tensor& x = *vals[0];
    const Tensor& y = *vals[1];
    const Broadcast mode = broadcast_mode(op, x, y);
    out = Tensor(x.shape());
    const std::size_t cols = x.cols();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = x[i];
      const double b = y[rhs_index(mode, i, cols)];
      switch (op) {
        case OpKind::add: out[i] = a + b; break;
        case OpKind::sub: out[i] = a - b; break;
        case OpKind::mul: out[i] = a * b; break;
        case OpKind::div: out[i] = a / b; break;
        case OpKind::minimum: out[i] = b < a ? b : a; break;
        default: break;
      }
    }
  } else {
    switch (op) {
      case OpKind::matmul: {
        const MatmulDims d = matmul_dims(*vals[0], *vals[1]);
        out = Tensor(d.out);
        kernels::active().gemm_nn(d.m, d.n, d.k, vals[0]->ptr(), vals[1]->ptr(), out.ptr(), false);
        break;
      }
      case OpKind::sum:
      case OpKind::mean: {
        double s = 0.0;
        for (double v : vals[0]->data()) s += v;
        out = Tensor::scalar(op == OpKind::mean ? s / static_cast<double>(vals[0]->size()) : s);
        break;
      }
      case OpKind::row_sum: {
        const Tensor& x = *vals[0];
        if (x.rank() == 0) shape_fail(op, vals, "needs rank >= 1");
        Shape s = x.shape();
        s.back() = 1;
        out = Tensor(s);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double acc = 0.0;
          for (double v : x.row(r)) acc += v;
          out[r] = acc;
        }
        break;
      }
      case OpKind::concat: {
        if (vals.empty()) throw std::invalid_argument("concat: no inputs");
        const Tensor& first = *vals[0];
        if (first.rank() == 0) shape_fail(op, vals, "needs rank >= 1");
        std::size_t total = 0;
        for (const Tensor* t : vals) {
          if (t->rank() != first.rank() || t->rows() != first.rows()) {
            shape_fail(op, vals, "leading dimensions differ");
          }
          for (std::size_t i = 0; i + 1 < t->rank(); ++i) {
            if (t->shape()[i] != first.shape()[i]) shape_fail(op, vals, "leading dimensions differ");
          }
          total += t->cols();
        }
        Shape s = first.shape();
        s.back() = total;
        out = Tensor(s);
        for (std::size_t r = 0; r < first.rows(); ++r) {
          double* dst = out.ptr() + r * total;
          for (const Tensor* t : vals) {
            auto src = t->row(r);
            std::copy(src.begin(), src.end(), dst);
            dst += src.size();
          }
        }
        break;
      }
      case OpKind::slice: {
        const Tensor& x = *vals[0];
        if (x.rank() == 0 || attrs.begin >= attrs.end || attrs.end > x.cols()) {
          shape_fail(op, vals,
                     "invalid range [" + std::to_string(attrs.begin) + "," + std::to_string(attrs.end) + ")");
        }
        Shape s = x.shape();
        s.back() = attrs.end - attrs.begin;
        out = Tensor(s);
        const std::size_t w = attrs.end - attrs.begin;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          auto src = x.row(r);
          std::copy(src.begin() + attrs.begin, src.begin() + attrs.end, out.ptr() + r * w);
        }
        break;
      }
      case OpKind::row_select: {
        const Tensor& a = *vals[0];
        const Tensor& b = *vals[1];
        if (a.shape() != b.shape()) shape_fail(op, vals, "branches differ in shape");
        if (attrs.mask.size() != a.rows()) shape_fail(op, vals, "mask length does not match rows");
        out = b;
        for (std::size_t r = 0; r < a.rows(); ++r) {
          if (attrs.mask[r]) std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
        }
        break;
      }
      case OpKind::reparam_sample: {
        const Tensor& mu = *vals[0];
        const Tensor& ls = *vals[1];
        if (mu.shape() != ls.shape() || mu.shape() != attrs.aux.shape()) {
          const Tensor* ops[3] = {&mu, &ls, &attrs.aux};
          shape_fail(op, ops, "mean, log_std and noise must share a shape");
        }
        out = Tensor(mu.shape());
        for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] + std::exp(ls[i]) * attrs.aux[i];
        break;
      }
      case OpKind::gaussian_nll: {
        const Tensor& mu = *vals[0];
        const Tensor& ls = *vals[1];
        const Tensor& t = *vals[2];
        if (mu.shape() != ls.shape() || mu.shape() != t.shape()) {
          shape_fail(op, vals, "mean, log_std and target must share a shape");
        }
        double s = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
          const double z = (t[i] - mu[i]) * std::exp(-ls[i]);
          s += ls[i] + 0.5 * z * z + kHalfLog2Pi;
        }
        out = Tensor::scalar(s);
        break;
      }
      case OpKind::grad_swap: {
        if (vals[0]->shape() != vals[1]->shape()) shape_fail(op, vals, "predicted and real differ in shape");
        out = *vals[1];
        break;
      }
      default:
        throw std::invalid_argument(std::string(op_name(op)) + ": not recordable");
    }
  }
  return push(op, std::vector<NodeId>(inputs.begin(), inputs.end()), std::move(out), std::move(attrs));
}

GradientMap Tape::backward(NodeId root) const {
  if (root.index >= nodes_.size()) throw std::out_of_range("backward: root not on tape");
  const Tensor& rv = nodes_[root.index].value;
  if (rv.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(rv.shape()));

  std::vector<Tensor> adj(root.index + 1);
  adj[root.index] = Tensor::filled(rv.shape(), 1.0);
  const auto& kt = kernels::active();

  auto acc = [&](NodeId id) -> Tensor* {
    const Node& n = nodes_[id.index];
    if (!n.requires_grad) return nullptr;
    Tensor& a = adj[id.index];
    if (a.size() == 0) a = Tensor(n.value.shape());
    return &a;
  };

  for (std::size_t idx = root.index + 1; idx-- > 0;) {
    if (adj[idx].size() == 0) continue;
    const Node& node = nodes_[idx];
    if (node.inputs.empty()) continue;
    const Tensor& g = adj[idx];
    const Tensor& y = node.value;
    const std::size_t n = g.size();

    if (is_unary_elementwise(node.op)) {
      Tensor* gx = acc(node.inputs[0]);
      if (!gx) continue;
      const Tensor& x = nodes_[node.inputs[0].index].value;
      double* d = gx->ptr();
      switch (node.op) {
        case OpKind::neg: for (std::size_t i = 0; i < n; ++i) d[i] -= g[i]; break;
        case OpKind::exp: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * y[i]; break;
        case OpKind::log: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] / x[i]; break;
        case OpKind::tanh: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * (1.0 - y[i] * y[i]); break;
        case OpKind::sin: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * std::cos(x[i]); break;
        case OpKind::cos: for (std::size_t i = 0; i < n; ++i) d[i] -= g[i] * std::sin(x[i]); break;
        case OpKind::elu:
          for (std::size_t i = 0; i < n; ++i) d[i] += x[i] > 0.0 ? g[i] : g[i] * (y[i] + 1.0);
          break;
        case OpKind::silu:
          for (std::size_t i = 0; i < n; ++i) {
            const double s = sigmoid(x[i]);
            d[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
          }
          break;
        case OpKind::softplus: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * sigmoid(x[i]); break;
        case OpKind::square: for (std::size_t i = 0; i < n; ++i) d[i] += 2.0 * x[i] * g[i]; break;
        case OpKind::scale: kt.axpy(node.attrs.a, g.ptr(), d, n); break;
        case OpKind::add_scalar: kt.axpy(1.0, g.ptr(), d, n); break;
        case OpKind::clamp:
          for (std::size_t i = 0; i < n; ++i) {
            if (x[i] >= node.attrs.a && x[i] <= node.attrs.b) d[i] += g[i];
          }
          break;
        default: break;
      }
      continue;
    }

    if (is_binary_elementwise(node.op)) {
      const Tensor& x = nodes_[node.inputs[0].index].value;
      const Tensor& w = nodes_[node.inputs[1].index].value;
      const Broadcast mode = broadcast_mode(node.op, x, w);
      const std::size_t cols = x.cols();
      Tensor* gx = acc(node.inputs[0]);
      Tensor* gw = acc(node.inputs[1]);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = rhs_index(mode, i, cols);
        const double a = x[i];
        const double b = w[j];
        double da = 0.0, db = 0.0;
        switch (node.op) {
          case OpKind::add: da = g[i]; db = g[i]; break;
          case OpKind::sub: da = g[i]; db = -g[i]; break;
          case OpKind::mul: da = g[i] * b; db = g[i] * a; break;
          case OpKind::div: da = g[i] / b; db = -g[i] * a / (b * b); break;
          case OpKind::minimum:
            if (b < a) db = g[i]; else da = g[i];
            break;
          default: break;
        }
        if (gx) (*gx)[i] += da;
        if (gw) (*gw)[j] += db;
      }
      continue;
    }

    switch (node.op) {
      case OpKind::matmul: {
        const Tensor& a = nodes_[node.inputs[0].index].value;
        const Tensor& b = nodes_[node.inputs[1].index].value;
        const MatmulDims d = matmul_dims(a, b);
        if (Tensor* ga = acc(node.inputs[0])) kt.gemm_nt(d.m, d.k, d.n, g.ptr(), b.ptr(), ga->ptr(), true);
        if (Tensor* gb = acc(node.inputs[1])) kt.gemm_tn(d.k, d.n, d.m, a.ptr(), g.ptr(), gb->ptr(), true);
        break;
      }
      case OpKind::sum:
      case OpKind::mean: {
        if (Tensor* gx = acc(node.inputs[0])) {
          const double s = node.op == OpKind::mean ? g[0] / static_cast<double>(gx->size()) : g[0];
          for (double& v : gx->data()) v += s;
        }
        break;
      }
      case OpKind::row_sum: {
        if (Tensor* gx = acc(node.inputs[0])) {
          for (std::size_t r = 0; r < gx->rows(); ++r) {
            for (double& v : gx->row(r)) v += g[r];
          }
        }
        break;
      }
      case OpKind::concat: {
        std::size_t offset = 0;
        const std::size_t total = y.cols();
        for (NodeId in : node.inputs) {
          const std::size_t w = nodes_[in.index].value.cols();
          if (Tensor* gx = acc(in)) {
            for (std::size_t r = 0; r < y.rows(); ++r) {
              kt.axpy(1.0, g.ptr() + r * total + offset, gx->ptr() + r * w, w);
            }
          }
          offset += w;
        }
        break;
      }
      case OpKind::slice: {
        if (Tensor* gx = acc(node.inputs[0])) {
          const std::size_t w = node.attrs.end - node.attrs.begin;
          const std::size_t cols = gx->cols();
          for (std::size_t r = 0; r < y.rows(); ++r) {
            kt.axpy(1.0, g.ptr() + r * w, gx->ptr() + r * cols + node.attrs.begin, w);
          }
        }
        break;
      }
      case OpKind::row_select: {
        Tensor* ga = acc(node.inputs[0]);
        Tensor* gb = acc(node.inputs[1]);
        const std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          Tensor* dst = node.attrs.mask[r] ? ga : gb;
          if (dst) kt.axpy(1.0, g.ptr() + r * cols, dst->ptr() + r * cols, cols);
        }
        break;
      }
      case OpKind::reparam_sample: {
        const Tensor& ls = nodes_[node.inputs[1].index].value;
        if (Tensor* gm = acc(node.inputs[0])) kt.axpy(1.0, g.ptr(), gm->ptr(), n);
        if (Tensor* gl = acc(node.inputs[1])) {
          for (std::size_t i = 0; i < n; ++i) (*gl)[i] += g[i] * std::exp(ls[i]) * node.attrs.aux[i];
        }
        break;
      }
      case OpKind::gaussian_nll: {
        const Tensor& mu = nodes_[node.inputs[0].index].value;
        const Tensor& ls = nodes_[node.inputs[1].index].value;
        const Tensor& t = nodes_[node.inputs[2].index].value;
        Tensor* gm = acc(node.inputs[0]);
        Tensor* gl = acc(node.inputs[1]);
        Tensor* gt = acc(node.inputs[2]);
        const double s = g[0];
        for (std::size_t i = 0; i < mu.size(); ++i) {
          const double inv = std::exp(-ls[i]);
          const double z = (t[i] - mu[i]) * inv;
          if (gm) (*gm)[i] -= s * z * inv;
          if (gl) (*gl)[i] += s * (1.0 - z * z);
          if (gt) (*gt)[i] += s * z * inv;
        }
        break;
      }
      case OpKind::grad_swap: {
        if (Tensor* gp = acc(node.inputs[0])) kt.axpy(1.0, g.ptr(), gp->ptr(), n);
        break;
      }
      default:
        break;
    }
  }

  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& nd : nodes_) shapes.push_back(nd.value.shape());
  adj.resize(nodes_.size());
  // constants never carry adjoints; drop any that were seeded as the root
  for (std::size_t i = 0; i < adj.size(); ++i) {
    if (!nodes_[i].requires_grad && i != root.index) adj[i] = Tensor();
  }
  return GradientMap(std::move(adj), std::move(shapes));
}

}  // namespace dmo

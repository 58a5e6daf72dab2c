#include "safeadapt/diffcore/tape.hpp"

#include <algorithm>
#include <cmath>

namespace safeadapt::diff {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::softmax: return "softmax";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::broadcast: return "broadcast";
    case Op::transpose: return "transpose";
    case Op::scale: return "scale";
    case Op::clamp: return "clamp";
  }
  return "?";
}

namespace {

using MapC = Eigen::Map<const Matrix>;

[[noreturn]] void shape_mismatch(Op op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void expect_arity(Op op, const std::vector<const Tensor*>& inputs, std::size_t n) {
  if (inputs.size() != n) {
    throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
}

Shape reduced_shape(const Tensor& a, Axis axis) {
  switch (axis) {
    case Axis::all: return {};
    case Axis::rows: return {1, a.cols()};
    case Axis::cols: return {a.rows(), 1};
  }
  return {};
}

Tensor unary(const Tensor& a, auto&& fn) {
  Tensor out = Tensor::zeros(a.shape());
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

bool broadcastable(const Tensor& a, const Shape& target) {
  if (a.shape() == target || a.size() == 1) return true;
  if (target.size() != 2) return false;
  const std::size_t r = target[0], c = target[1];
  if (a.rows() == 1 && a.cols() == c) return true;
  if (a.rank() == 2 && a.rows() == r && a.cols() == 1) return true;
  return false;
}

}  // namespace

Tensor forward_primitive(Op op, const std::vector<const Tensor*>& in, const OpAttrs& attrs) {
  switch (op) {
    case Op::leaf:
      throw ShapeError("leaf is not a primitive");
    case Op::add:
    case Op::sub:
    case Op::mul: {
      expect_arity(op, in, 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
      Tensor out = Tensor::zeros(a.shape());
      auto x = a.values();
      auto y = b.values();
      auto o = out.values();
      if (op == Op::add)
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      else if (op == Op::sub)
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      else
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      return out;
    }
    case Op::matmul: {
      expect_arity(op, in, 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_mismatch(op, a.shape(), b.shape());
      Tensor out = Tensor::zeros({a.rows(), b.cols()});
      out.as_matrix().noalias() = a.as_matrix() * b.as_matrix();
      return out;
    }
    case Op::tanh:
      expect_arity(op, in, 1);
      return unary(*in[0], [](double v) { return std::tanh(v); });
    case Op::relu:
      expect_arity(op, in, 1);
      return unary(*in[0], [](double v) { return v > 0.0 ? v : 0.0; });
    case Op::exp:
      expect_arity(op, in, 1);
      return unary(*in[0], [](double v) { return std::exp(v); });
    case Op::log:
      expect_arity(op, in, 1);
      return unary(*in[0], [](double v) { return std::log(v); });
    case Op::scale: {
      expect_arity(op, in, 1);
      const double f = attrs.factor;
      return unary(*in[0], [f](double v) { return f * v; });
    }
    case Op::clamp: {
      expect_arity(op, in, 1);
      if (!(attrs.lo <= attrs.hi)) throw ShapeError("clamp: lower bound above upper bound");
      const double lo = attrs.lo, hi = attrs.hi;
      return unary(*in[0], [lo, hi](double v) { return std::clamp(v, lo, hi); });
    }
    case Op::sum:
    case Op::mean: {
      expect_arity(op, in, 1);
      const Tensor& a = *in[0];
      Tensor out = Tensor::zeros(reduced_shape(a, attrs.axis));
      const auto m = a.as_matrix();
      double denom = 1.0;
      switch (attrs.axis) {
        case Axis::all:
          out[0] = m.sum();
          denom = static_cast<double>(a.size());
          break;
        case Axis::rows:
          out.as_matrix() = m.colwise().sum();
          denom = static_cast<double>(a.rows());
          break;
        case Axis::cols:
          out.as_matrix() = m.rowwise().sum();
          denom = static_cast<double>(a.cols());
          break;
      }
      if (op == Op::mean) {
        if (denom == 0.0) throw ShapeError("mean: empty reduction over shape " + to_string(a.shape()));
        for (double& v : out.values()) v /= denom;
      }
      return out;
    }
    case Op::softmax: {
      expect_arity(op, in, 1);
      const Tensor& a = *in[0];
      Tensor out = Tensor::zeros(a.shape());
      const auto m = a.as_matrix();
      auto o = out.as_matrix();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double mx = m.row(r).maxCoeff();
        o.row(r) = (m.row(r).array() - mx).exp().matrix();
        o.row(r) /= o.row(r).sum();
      }
      return out;
    }
    case Op::concat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      const std::size_t rows = in[0]->rows();
      std::size_t cols = 0;
      bool all_rank1 = true;
      for (const Tensor* t : in) {
        if (t->rows() != rows) shape_mismatch(op, in[0]->shape(), t->shape());
        cols += t->cols();
        all_rank1 = all_rank1 && t->rank() == 1;
      }
      Tensor out = Tensor::zeros(all_rank1 ? Shape{cols} : Shape{rows, cols});
      auto o = out.as_matrix();
      Eigen::Index offset = 0;
      for (const Tensor* t : in) {
        const auto c = static_cast<Eigen::Index>(t->cols());
        o.middleCols(offset, c) = t->as_matrix();
        offset += c;
      }
      return out;
    }
    case Op::slice: {
      expect_arity(op, in, 1);
      const Tensor& a = *in[0];
      if (attrs.begin >= attrs.end || attrs.end > a.cols() || a.rank() == 0) {
        throw ShapeError("slice: range [" + std::to_string(attrs.begin) + "," + std::to_string(attrs.end) +
                         ") invalid for shape " + to_string(a.shape()));
      }
      const std::size_t width = attrs.end - attrs.begin;
      Tensor out = Tensor::zeros(a.rank() == 1 ? Shape{width} : Shape{a.rows(), width});
      out.as_matrix() = a.as_matrix().middleCols(static_cast<Eigen::Index>(attrs.begin),
                                                 static_cast<Eigen::Index>(width));
      return out;
    }
    case Op::broadcast: {
      expect_arity(op, in, 1);
      const Tensor& a = *in[0];
      if (!broadcastable(a, attrs.target)) shape_mismatch(op, a.shape(), attrs.target);
      Tensor out = Tensor::zeros(attrs.target);
      if (a.shape() == attrs.target) return a;
      if (a.size() == 1) return Tensor::filled(attrs.target, a[0]);
      auto o = out.as_matrix();
      const auto m = a.as_matrix();
      if (m.rows() == 1)
        o.rowwise() = m.row(0);
      else
        o.colwise() = m.col(0);
      return out;
    }
    case Op::transpose: {
      expect_arity(op, in, 1);
      const Tensor& a = *in[0];
      if (a.rank() == 0) return a;
      Tensor out = Tensor::zeros({a.cols(), a.rows()});
      out.as_matrix() = a.as_matrix().transpose();
      return out;
    }
  }
  throw ShapeError("unknown primitive");
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{Op::leaf, {}, {}, std::move(value), requires_grad});
  return Var{this, nodes_.size() - 1};
}

Var Tape::apply(Op op, const std::vector<Var>& inputs, OpAttrs attrs) {
  std::vector<const Tensor*> values;
  std::vector<std::size_t> ids;
  bool needs_grad = false;
  values.reserve(inputs.size());
  for (Var v : inputs) {
    if (v.tape != this) throw ShapeError(std::string(op_name(op)) + ": input recorded on a different tape");
    values.push_back(&nodes_.at(v.id).value);
    ids.push_back(v.id);
    needs_grad = needs_grad || nodes_[v.id].requires_grad;
  }
  Tensor out = forward_primitive(op, values, attrs);
  nodes_.push_back(Node{op, std::move(ids), std::move(attrs), std::move(out), needs_grad});
  return Var{this, nodes_.size() - 1};
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> out;
  out.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if (n.op == Op::leaf) {
      out.push_back(n.value);
      continue;
    }
    std::vector<const Tensor*> ins;
    for (std::size_t id : n.inputs) ins.push_back(&out[id]);
    out.push_back(forward_primitive(n.op, ins, n.attrs));
  }
  return out;
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw ShapeError("backward: loss recorded on a different tape");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(lv.shape()));

  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> touched(nodes_.size(), false);
  grads[loss.id] = Tensor::filled(lv.shape(), 1.0);
  touched[loss.id] = true;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!touched[i] || !node.requires_grad || node.op == Op::leaf) continue;
    // Inputs get zero-initialized buffers on first touch.
    for (std::size_t id : node.inputs) {
      if (!touched[id] && nodes_[id].requires_grad) {
        grads[id] = Tensor::zeros(nodes_[id].value.shape());
        touched[id] = true;
      }
    }
    accumulate_input_grads(node, grads[i], grads);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!touched[i]) grads[i] = Tensor::zeros(nodes_[i].value.shape());
  return Gradients(std::move(grads));
}

void Tape::accumulate_input_grads(const Node& node, const Tensor& g, std::vector<Tensor>& grads) const {
  auto wants = [&](std::size_t k) { return nodes_[node.inputs[k]].requires_grad; };
  auto gin = [&](std::size_t k) -> Tensor& { return grads[node.inputs[k]]; };
  auto xin = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  const auto gm = g.as_matrix();

  switch (node.op) {
    case Op::leaf:
      return;
    case Op::add:
      if (wants(0)) gin(0).as_matrix() += gm;
      if (wants(1)) gin(1).as_matrix() += gm;
      return;
    case Op::sub:
      if (wants(0)) gin(0).as_matrix() += gm;
      if (wants(1)) gin(1).as_matrix() -= gm;
      return;
    case Op::mul:
      if (wants(0)) gin(0).as_matrix().array() += gm.array() * xin(1).as_matrix().array();
      if (wants(1)) gin(1).as_matrix().array() += gm.array() * xin(0).as_matrix().array();
      return;
    case Op::matmul:
      if (wants(0)) gin(0).as_matrix().noalias() += gm * xin(1).as_matrix().transpose();
      if (wants(1)) gin(1).as_matrix().noalias() += xin(0).as_matrix().transpose() * gm;
      return;
    case Op::tanh:
      if (wants(0)) gin(0).as_matrix().array() += gm.array() * (1.0 - node.value.as_matrix().array().square());
      return;
    case Op::relu:
      if (wants(0)) gin(0).as_matrix().array() += (xin(0).as_matrix().array() > 0.0).select(gm.array(), 0.0);
      return;
    case Op::exp:
      if (wants(0)) gin(0).as_matrix().array() += gm.array() * node.value.as_matrix().array();
      return;
    case Op::log:
      if (wants(0)) gin(0).as_matrix().array() += gm.array() / xin(0).as_matrix().array();
      return;
    case Op::scale:
      if (wants(0)) gin(0).as_matrix() += node.attrs.factor * gm;
      return;
    case Op::clamp:
      if (wants(0)) {
        const auto x = xin(0).as_matrix().array();
        gin(0).as_matrix().array() += (x >= node.attrs.lo && x <= node.attrs.hi).select(gm.array(), 0.0);
      }
      return;
    case Op::sum:
    case Op::mean: {
      if (!wants(0)) return;
      Tensor& gi = gin(0);
      auto gx = gi.as_matrix();
      double denom = 1.0;
      switch (node.attrs.axis) {
        case Axis::all:
          if (node.op == Op::mean) denom = static_cast<double>(gi.size());
          gx.array() += g[0] / denom;
          break;
        case Axis::rows:
          if (node.op == Op::mean) denom = static_cast<double>(gi.rows());
          gx.rowwise() += gm.row(0) / denom;
          break;
        case Axis::cols:
          if (node.op == Op::mean) denom = static_cast<double>(gi.cols());
          gx.colwise() += gm.col(0) / denom;
          break;
      }
      return;
    }
    case Op::softmax: {
      if (!wants(0)) return;
      const auto y = node.value.as_matrix();
      auto gx = gin(0).as_matrix();
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = gm.row(r).dot(y.row(r));
        gx.row(r).array() += y.row(r).array() * (gm.row(r).array() - dot);
      }
      return;
    }
    case Op::concat: {
      Eigen::Index offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const auto c = static_cast<Eigen::Index>(xin(k).cols());
        if (wants(k)) gin(k).as_matrix() += gm.middleCols(offset, c);
        offset += c;
      }
      return;
    }
    case Op::slice:
      if (wants(0)) {
        gin(0).as_matrix().middleCols(static_cast<Eigen::Index>(node.attrs.begin),
                                      static_cast<Eigen::Index>(node.attrs.end - node.attrs.begin)) += gm;
      }
      return;
    case Op::broadcast: {
      if (!wants(0)) return;
      Tensor& gi = gin(0);
      if (gi.shape() == g.shape()) {
        gi.as_matrix() += gm;
      } else if (gi.size() == 1) {
        gi[0] += gm.sum();
      } else if (gi.rows() == 1) {
        gi.as_matrix().row(0) += gm.colwise().sum();
      } else {
        gi.as_matrix().col(0) += gm.rowwise().sum();
      }
      return;
    }
    case Op::transpose:
      if (wants(0)) {
        Tensor& gi = gin(0);
        if (gi.rank() == 0)
          gi[0] += g[0];
        else
          gi.as_matrix() += gm.transpose();
      }
      return;
  }
}

namespace {
Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ShapeError("variable is not attached to a tape");
  return *a.tape;
}
}  // namespace

Var add(Var a, Var b) { return tape_of(a).apply(Op::add, {a, b}); }
Var sub(Var a, Var b) { return tape_of(a).apply(Op::sub, {a, b}); }
Var mul(Var a, Var b) { return tape_of(a).apply(Op::mul, {a, b}); }
Var matmul(Var a, Var b) { return tape_of(a).apply(Op::matmul, {a, b}); }
Var tanh(Var a) { return tape_of(a).apply(Op::tanh, {a}); }
Var relu(Var a) { return tape_of(a).apply(Op::relu, {a}); }
Var exp(Var a) { return tape_of(a).apply(Op::exp, {a}); }
Var log(Var a) { return tape_of(a).apply(Op::log, {a}); }
Var sum(Var a, Axis axis) { return tape_of(a).apply(Op::sum, {a}, OpAttrs{.axis = axis}); }
Var mean(Var a, Axis axis) { return tape_of(a).apply(Op::mean, {a}, OpAttrs{.axis = axis}); }
Var softmax(Var a) { return tape_of(a).apply(Op::softmax, {a}); }
Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  return tape_of(parts.front()).apply(Op::concat, parts);
}
Var slice(Var a, std::size_t begin, std::size_t end) {
  return tape_of(a).apply(Op::slice, {a}, OpAttrs{.begin = begin, .end = end});
}
Var broadcast(Var a, Shape target) {
  return tape_of(a).apply(Op::broadcast, {a}, OpAttrs{.target = std::move(target)});
}
Var transpose(Var a) { return tape_of(a).apply(Op::transpose, {a}); }
Var scale(Var a, double factor) { return tape_of(a).apply(Op::scale, {a}, OpAttrs{.factor = factor}); }
Var clamp(Var a, double lo, double hi) { return tape_of(a).apply(Op::clamp, {a}, OpAttrs{.lo = lo, .hi = hi}); }

}  // namespace safeadapt::diff

#pragma once

#include "safeadapt/diffcore/tensor.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace safeadapt::diff {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  tanh,
  relu,
  exp,
  log,
  sum,
  mean,
  softmax,  // over the last axis
  concat,   // along the last axis
  slice,    // column range [begin, end) of the last axis
  broadcast,
  transpose,
  scale,  // multiply by a constant
  clamp,
};

std::string_view op_name(Op op);

/// Reduction axis for sum/mean. `rows` collapses axis 0, `cols` collapses the last axis.
enum class Axis : std::uint8_t { all, rows, cols };

struct OpAttrs {
  Axis axis = Axis::all;
  std::size_t begin = 0;
  std::size_t end = 0;
  Shape target{};
  double factor = 1.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Pure forward evaluation of one primitive. Throws ShapeError naming the primitive and shapes.
Tensor forward_primitive(Op op, const std::vector<const Tensor*>& inputs, const OpAttrs& attrs = {});

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> per_node) : per_node_(std::move(per_node)) {}

  /// d(loss)/d(node); zeros for nodes the loss does not depend on.
  const Tensor& of(Var v) const { return per_node_.at(v.id); }

 private:
  std::vector<Tensor> per_node_;
};

/// Records primitives in execution order, which is a valid topological order by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var apply(Op op, const std::vector<Var>& inputs, OpAttrs attrs = {});

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss.
  Gradients backward(Var loss) const;

  /// Re-evaluates every non-leaf node from the stored leaves.
  std::vector<Tensor> replay() const;

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    OpAttrs attrs;
    Tensor value;
    bool requires_grad = false;
  };

  void accumulate_input_grads(const Node& node, const Tensor& grad, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
};

// Convenience wrappers. All inputs must live on the same tape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a, Axis axis = Axis::all);
Var mean(Var a, Axis axis = Axis::all);
Var softmax(Var a);
Var concat(const std::vector<Var>& parts);
Var slice(Var a, std::size_t begin, std::size_t end);
Var broadcast(Var a, Shape target);
Var transpose(Var a);
Var scale(Var a, double factor);
Var clamp(Var a, double lo, double hi);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace safeadapt::diff

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "procstruct/tensor.hpp"

namespace procstruct {

class Tape;

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  ScaleShift,
  Sigmoid,
  Tanh,
  Softmax,
  CumSum,
  Cumax,
  Concat,
  Slice,
  GatherRow,
  Repeat,
  Sum,
  CrossEntropy,
};

const char* op_name(OpKind op);

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  bool valid() const { return tape != nullptr; }
};

using GradientMap = std::map<std::uint32_t, Tensor>;

// Records one training step's (or one inference pass's) primitive operations
// in execution order. Node ids are indices into that order, so every input
// id precedes the id of the node that consumes it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that does not receive gradients.
  Var constant(Tensor value);
  // Leaf that receives gradients; the tape owns its value.
  Var variable(Tensor value);
  // Leaf bound to an external parameter. Binding the same tensor twice returns
  // the same node. The tensor must outlive the tape and stay unmodified.
  Var param(const Tensor& t);

  std::span<const double> value(Var v) const;
  const Shape& shape(Var v) const;
  Tensor tensor(Var v) const;
  double scalar(Var v) const;
  OpKind op(Var v) const { return nodes_[v.id].op; }
  std::span<const std::uint32_t> inputs(Var v) const { return nodes_[v.id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. May be called once per tape.
  void backward(Var loss);

  // Gradient of the last backward() loss w.r.t. a node; zeros if unreached.
  Tensor gradient(Var v) const;
  // Gradient w.r.t. a bound parameter, or nullopt if it was never bound.
  std::optional<std::span<const double>> gradient_of(const Tensor& param) const;
  GradientMap gradients() const;

  // Number of nodes the last backward() processed.
  std::size_t visited() const { return visited_; }

  // Internal node construction; used by the op functions below.
  Var push(OpKind op, Shape shape, std::vector<double> value,
           std::vector<std::uint32_t> inputs);
  void set_aux(Var v, double a, double b = 0.0, std::size_t index = 0);
  void set_saved(Var v, std::vector<double> saved);

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    Shape shape;
    std::vector<double> value;
    const Tensor* external = nullptr;
    std::vector<std::uint32_t> inputs;
    std::vector<double> saved;
    double a = 0.0;
    double b = 0.0;
    std::size_t index = 0;
    bool requires_grad = false;
  };

  std::span<const double> node_value(const Node& n) const {
    return n.external ? std::span<const double>(n.external->values)
                      : std::span<const double>(n.value);
  }
  std::vector<double>& grad_buffer(std::uint32_t id);
  void backprop_node(std::uint32_t id);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const Tensor*, std::uint32_t> bound_;
  std::size_t visited_ = 0;
  bool backward_done_ = false;
};

// Differentiable primitives. All operands must live on the same tape.

// [m x k] * [k x n] -> [m x n]; [m x k] * [k] -> [m].
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// scale * x + shift, elementwise.
Var scale_shift(Var x, double scale, double shift = 0.0);
inline Var scale(Var x, double s) { return scale_shift(x, s, 0.0); }
// 1 - x
inline Var one_minus(Var x) { return scale_shift(x, -1.0, 1.0); }
Var sigmoid(Var x);
Var tanh(Var x);
Var softmax(Var x);
Var cumsum(Var x);
// cumsum(softmax(x)) along the last axis, computed as prefix sums of the
// shifted exponentials divided by their total, so entries stay in [0, 1] and
// the last is exactly 1.
Var cumax(Var x);
Var concat(std::span<const Var> parts, std::size_t axis = 0);
Var concat(std::initializer_list<Var> parts, std::size_t axis = 0);
// Contiguous range [begin, begin + length) of a 1-D tensor.
Var slice(Var x, std::size_t begin, std::size_t length);
// Row `row` of a 2-D tensor as a 1-D tensor.
Var gather_row(Var matrix, std::size_t row);
// Each entry of a 1-D tensor repeated `times` times in place.
Var repeat_each(Var x, std::size_t times);
Var sum(Var x);
// -log softmax(logits)[target] over a 1-D logit vector.
Var cross_entropy(Var logits, std::size_t target);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace procstruct

#include "procstruct/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "procstruct/error.hpp"

namespace procstruct {

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError("operands live on different tapes");
  }
  return *a.tape;
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ContractError("operand is not bound to a tape");
  return *a.tape;
}

void require_same_shape(const Tape& t, Var a, Var b, const char* op) {
  if (t.shape(a) != t.shape(b)) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(t.shape(a)) + " and " +
                         shape_string(t.shape(b)) + " differ");
  }
}

std::size_t last_axis(const Shape& s) {
  if (s.empty()) throw DimensionError("axis operation on a rank-0 tensor");
  return s.back();
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::ScaleShift: return "scale_shift";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softmax: return "softmax";
    case OpKind::CumSum: return "cumsum";
    case OpKind::Cumax: return "cumax";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::GatherRow: return "gather_row";
    case OpKind::Repeat: return "repeat";
    case OpKind::Sum: return "sum";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  return push(OpKind::Leaf, std::move(value.shape), std::move(value.values), {});
}

Var Tape::variable(Tensor value) {
  Var v = push(OpKind::Leaf, std::move(value.shape), std::move(value.values), {});
  nodes_[v.id].requires_grad = true;
  return v;
}

Var Tape::param(const Tensor& t) {
  if (auto it = bound_.find(&t); it != bound_.end()) return Var{this, it->second};
  if (shape_size(t.shape) != t.values.size()) {
    throw DimensionError("parameter shape " + shape_string(t.shape) + " does not match its values");
  }
  Node n;
  n.op = OpKind::Leaf;
  n.shape = t.shape;
  n.external = &t;
  n.requires_grad = true;
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(std::move(n));
  bound_.emplace(&t, id);
  return Var{this, id};
}

Var Tape::push(OpKind op, Shape shape, std::vector<double> value,
               std::vector<std::uint32_t> inputs) {
  if (backward_done_) throw ContractError("tape already consumed by backward()");
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  for (auto in : n.inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(std::move(n));
  return Var{this, id};
}

void Tape::set_aux(Var v, double a, double b, std::size_t index) {
  auto& n = nodes_[v.id];
  n.a = a;
  n.b = b;
  n.index = index;
}

void Tape::set_saved(Var v, std::vector<double> saved) { nodes_[v.id].saved = std::move(saved); }

std::span<const double> Tape::value(Var v) const { return node_value(nodes_.at(v.id)); }

const Shape& Tape::shape(Var v) const { return nodes_.at(v.id).shape; }

Tensor Tape::tensor(Var v) const {
  auto vals = value(v);
  return Tensor(shape(v), std::vector<double>(vals.begin(), vals.end()));
}

double Tape::scalar(Var v) const {
  auto vals = value(v);
  if (vals.size() != 1) throw ContractError("scalar() on a tensor of shape " + shape_string(shape(v)));
  return vals[0];
}

std::vector<double>& Tape::grad_buffer(std::uint32_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(shape_size(nodes_[id].shape), 0.0);
  return g;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss is not on this tape");
  if (shape_size(shape(loss)) != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(shape(loss)));
  }
  if (backward_done_) throw ContractError("backward() already ran on this tape");
  backward_done_ = true;
  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.id)[0] = 1.0;
  visited_ = 0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    if (grads_[id].empty() || !nodes_[id].requires_grad) continue;
    ++visited_;
    backprop_node(id);
  }
}

void Tape::backprop_node(std::uint32_t id) {
  const Node& n = nodes_[id];
  const std::vector<double>& g = grads_[id];
  const auto y = node_value(n);
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in_value = [&](std::size_t k) { return node_value(nodes_[n.inputs[k]]); };

  switch (n.op) {
    case OpKind::Leaf:
      break;

    case OpKind::MatMul: {
      const auto& as = nodes_[n.inputs[0]].shape;
      const auto& bs = nodes_[n.inputs[1]].shape;
      const std::size_t m = as[0], k = as[1];
      const std::size_t cols = bs.size() == 2 ? bs[1] : 1;
      const auto a = in_value(0);
      const auto b = in_value(1);
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const double gij = g[i * cols + j];
            if (gij == 0.0) continue;
            double* row = &ga[i * k];
            for (std::size_t p = 0; p < k; ++p) row[p] += gij * b[p * cols + j];
          }
        }
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = &a[i * k];
          for (std::size_t j = 0; j < cols; ++j) {
            const double gij = g[i * cols + j];
            if (gij == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) gb[p * cols + j] += arow[p] * gij;
          }
        }
      }
      break;
    }

    case OpKind::Add:
    case OpKind::Sub: {
      const double sign = n.op == OpKind::Add ? 1.0 : -1.0;
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      }
      break;
    }

    case OpKind::Mul: {
      const auto a = in_value(0);
      const auto b = in_value(1);
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }

    case OpKind::ScaleShift: {
      auto& gx = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.a * g[i];
      break;
    }

    case OpKind::Sigmoid: {
      auto& gx = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }

    case OpKind::Tanh: {
      auto& gx = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }

    case OpKind::Softmax: {
      auto& gx = grad_buffer(n.inputs[0]);
      const std::size_t width = n.shape.back();
      for (std::size_t r = 0; r < g.size() / width; ++r) {
        const std::size_t o = r * width;
        double dot = 0.0;
        for (std::size_t i = 0; i < width; ++i) dot += g[o + i] * y[o + i];
        for (std::size_t i = 0; i < width; ++i) gx[o + i] += y[o + i] * (g[o + i] - dot);
      }
      break;
    }

    case OpKind::Cumax: {
      // p_i = y_i - y_{i-1}; the prefix sum passes g back as suffix sums,
      // then through the softmax Jacobian.
      auto& gx = grad_buffer(n.inputs[0]);
      const std::size_t width = n.shape.back();
      std::vector<double> p(width), gp(width);
      for (std::size_t r = 0; r < g.size() / width; ++r) {
        const std::size_t o = r * width;
        double acc = 0.0, dot = 0.0;
        for (std::size_t i = width; i-- > 0;) {
          p[i] = y[o + i] - (i ? y[o + i - 1] : 0.0);
          gp[i] = (acc += g[o + i]);
          dot += p[i] * gp[i];
        }
        for (std::size_t i = 0; i < width; ++i) gx[o + i] += p[i] * (gp[i] - dot);
      }
      break;
    }

    case OpKind::CumSum: {
      auto& gx = grad_buffer(n.inputs[0]);
      const std::size_t width = n.shape.back();
      for (std::size_t r = 0; r < g.size() / width; ++r) {
        const std::size_t o = r * width;
        double acc = 0.0;
        for (std::size_t i = width; i-- > 0;) {
          acc += g[o + i];
          gx[o + i] += acc;
        }
      }
      break;
    }

    case OpKind::Concat: {
      const std::size_t axis = n.index;
      std::size_t outer = 1, inner = 1;
      for (std::size_t d = 0; d < axis; ++d) outer *= n.shape[d];
      for (std::size_t d = axis + 1; d < n.shape.size(); ++d) inner *= n.shape[d];
      const std::size_t out_row = n.shape[axis] * inner;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t part_row = nodes_[n.inputs[k]].shape[axis] * inner;
        if (wants(k)) {
          auto& gp = grad_buffer(n.inputs[k]);
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < part_row; ++i) gp[o * part_row + i] += g[o * out_row + offset + i];
          }
        }
        offset += part_row;
      }
      break;
    }

    case OpKind::Slice: {
      auto& gx = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[n.index + i] += g[i];
      break;
    }

    case OpKind::GatherRow: {
      auto& gm = grad_buffer(n.inputs[0]);
      const std::size_t width = g.size();
      for (std::size_t i = 0; i < width; ++i) gm[n.index * width + i] += g[i];
      break;
    }

    case OpKind::Repeat: {
      auto& gx = grad_buffer(n.inputs[0]);
      const std::size_t times = n.index;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i / times] += g[i];
      break;
    }

    case OpKind::Sum: {
      auto& gx = grad_buffer(n.inputs[0]);
      for (auto& v : gx) v += g[0];
      break;
    }

    case OpKind::CrossEntropy: {
      auto& gx = grad_buffer(n.inputs[0]);
      const auto& p = n.saved;
      for (std::size_t i = 0; i < p.size(); ++i) gx[i] += g[0] * p[i];
      gx[n.index] -= g[0];
      break;
    }
  }
}

Tensor Tape::gradient(Var v) const {
  Tensor out(shape(v));
  if (v.id < grads_.size() && !grads_[v.id].empty()) out.values = grads_[v.id];
  return out;
}

std::optional<std::span<const double>> Tape::gradient_of(const Tensor& param) const {
  auto it = bound_.find(&param);
  if (it == bound_.end()) return std::nullopt;
  if (it->second >= grads_.size() || grads_[it->second].empty()) {
    return std::span<const double>();
  }
  return std::span<const double>(grads_[it->second]);
}

GradientMap Tape::gradients() const {
  GradientMap out;
  for (std::uint32_t id = 0; id < grads_.size(); ++id) {
    if (!grads_[id].empty() && nodes_[id].op == OpKind::Leaf && nodes_[id].requires_grad) {
      out.emplace(id, Tensor(nodes_[id].shape, grads_[id]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Primitive ops

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Shape& as = t.shape(a);
  const Shape& bs = t.shape(b);
  if (as.size() != 2 || (bs.size() != 1 && bs.size() != 2) || as[1] != bs[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_string(as) + " by " + shape_string(bs));
  }
  const std::size_t m = as[0], k = as[1];
  const std::size_t cols = bs.size() == 2 ? bs[1] : 1;
  const auto av = t.value(a);
  const auto bv = t.value(b);
  std::vector<double> out(m * cols, 0.0);
  if (cols == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = &av[i * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += row[p] * bv[p];
      out[i] = acc;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += aip * bv[p * cols + j];
      }
    }
  }
  Shape s = bs.size() == 2 ? Shape{m, cols} : Shape{m};
  return t.push(OpKind::MatMul, std::move(s), std::move(out), {a.id, b.id});
}

namespace {

template <class F>
Var binary(Var a, Var b, OpKind op, const char* name, F f) {
  Tape& t = same_tape(a, b);
  require_same_shape(t, a, b, name);
  const auto av = t.value(a);
  const auto bv = t.value(b);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return t.push(op, t.shape(a), std::move(out), {a.id, b.id});
}

template <class F>
Var unary(Var x, OpKind op, F f) {
  Tape& t = tape_of(x);
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return t.push(op, t.shape(x), std::move(out), {x.id});
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, OpKind::Add, "add", [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(a, b, OpKind::Sub, "sub", [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(a, b, OpKind::Mul, "mul", [](double x, double y) { return x * y; }); }

Var scale_shift(Var x, double s, double shift) {
  Var out = unary(x, OpKind::ScaleShift, [s, shift](double v) { return s * v + shift; });
  out.tape->set_aux(out, s, shift);
  return out;
}

Var sigmoid(Var x) { return unary(x, OpKind::Sigmoid, stable_sigmoid); }

Var tanh(Var x) { return unary(x, OpKind::Tanh, [](double v) { return std::tanh(v); }); }

Var softmax(Var x) {
  Tape& t = tape_of(x);
  const std::size_t width = last_axis(t.shape(x));
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < xv.size(); o += width) {
    const double mx = *std::max_element(xv.begin() + o, xv.begin() + o + width);
    double z = 0.0;
    for (std::size_t i = 0; i < width; ++i) z += (out[o + i] = std::exp(xv[o + i] - mx));
    for (std::size_t i = 0; i < width; ++i) out[o + i] /= z;
  }
  return t.push(OpKind::Softmax, t.shape(x), std::move(out), {x.id});
}

Var cumsum(Var x) {
  Tape& t = tape_of(x);
  const std::size_t width = last_axis(t.shape(x));
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < xv.size(); o += width) {
    double acc = 0.0;
    for (std::size_t i = 0; i < width; ++i) out[o + i] = (acc += xv[o + i]);
  }
  return t.push(OpKind::CumSum, t.shape(x), std::move(out), {x.id});
}

Var cumax(Var x) {
  Tape& t = tape_of(x);
  const std::size_t width = last_axis(t.shape(x));
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < xv.size(); o += width) {
    const double mx = *std::max_element(xv.begin() + o, xv.begin() + o + width);
    double acc = 0.0;
    for (std::size_t i = 0; i < width; ++i) out[o + i] = (acc += std::exp(xv[o + i] - mx));
    for (std::size_t i = 0; i < width; ++i) out[o + i] /= acc;
  }
  return t.push(OpKind::Cumax, t.shape(x), std::move(out), {x.id});
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Tape& t = tape_of(parts[0]);
  const Shape first = t.shape(parts[0]);
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const Shape& s = t.shape(p);
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_string(s) + " incompatible with " + shape_string(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(outer * out_row);
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto pv = t.value(p);
    const std::size_t part_row = t.shape(p)[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * part_row), part_row,
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
    }
    offset += part_row;
    ids.push_back(p.id);
  }
  Var v = t.push(OpKind::Concat, std::move(out_shape), std::move(out), std::move(ids));
  t.set_aux(v, 0.0, 0.0, axis);
  return v;
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var x, std::size_t begin, std::size_t length) {
  Tape& t = tape_of(x);
  const Shape& s = t.shape(x);
  if (s.size() != 1 || begin + length > s[0] || length == 0) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                         ") of " + shape_string(s));
  }
  const auto xv = t.value(x);
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin),
                          xv.begin() + static_cast<std::ptrdiff_t>(begin + length));
  Var v = t.push(OpKind::Slice, Shape{length}, std::move(out), {x.id});
  t.set_aux(v, 0.0, 0.0, begin);
  return v;
}

Var gather_row(Var matrix, std::size_t row) {
  Tape& t = tape_of(matrix);
  const Shape& s = t.shape(matrix);
  if (s.size() != 2) throw DimensionError("gather_row on " + shape_string(s));
  if (row >= s[0]) {
    throw IndexError("row " + std::to_string(row) + " out of range for " + shape_string(s));
  }
  const auto mv = t.value(matrix);
  std::vector<double> out(mv.begin() + static_cast<std::ptrdiff_t>(row * s[1]),
                          mv.begin() + static_cast<std::ptrdiff_t>((row + 1) * s[1]));
  Var v = t.push(OpKind::GatherRow, Shape{s[1]}, std::move(out), {matrix.id});
  t.set_aux(v, 0.0, 0.0, row);
  return v;
}

Var repeat_each(Var x, std::size_t times) {
  Tape& t = tape_of(x);
  const Shape& s = t.shape(x);
  if (s.size() != 1 || times == 0) throw DimensionError("repeat_each on " + shape_string(s));
  if (times == 1) return x;
  const auto xv = t.value(x);
  std::vector<double> out(xv.size() * times);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i / times];
  Shape shape{out.size()};
  Var v = t.push(OpKind::Repeat, std::move(shape), std::move(out), {x.id});
  t.set_aux(v, 0.0, 0.0, times);
  return v;
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  double acc = 0.0;
  for (double v : t.value(x)) acc += v;
  return t.push(OpKind::Sum, Shape{1}, {acc}, {x.id});
}

Var cross_entropy(Var logits, std::size_t target) {
  Tape& t = tape_of(logits);
  const Shape& s = t.shape(logits);
  if (s.size() != 1) throw DimensionError("cross_entropy expects 1-D logits, got " + shape_string(s));
  if (target >= s[0]) {
    throw IndexError("target " + std::to_string(target) + " out of range for " + std::to_string(s[0]) +
                     " classes");
  }
  const auto lv = t.value(logits);
  const double mx = *std::max_element(lv.begin(), lv.end());
  std::vector<double> p(lv.size());
  double z = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) z += (p[i] = std::exp(lv[i] - mx));
  for (auto& v : p) v /= z;
  const double loss = std::log(z) + mx - lv[target];
  Var v = t.push(OpKind::CrossEntropy, Shape{1}, {loss}, {logits.id});
  t.set_aux(v, 0.0, 0.0, target);
  t.set_saved(v, std::move(p));
  return v;
}

}  // namespace procstruct

#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Var is an immutable tensor value, optionally attached to a Tape. Ops on
// Vars compute their result eagerly and, when at least one operand is
// tracked, append a node with a backward closure to the operands' tape.
// Untracked inputs (built with `constant`) never touch a tape, which is how
// evaluation runs gradient-free.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "atmgcn/tensor.hpp"

namespace atmgcn {

class Tape;

class Var {
 public:
  Var() : value_(std::make_shared<const Tensor>()) {}

  const Tensor& value() const noexcept { return *value_; }
  const Shape& shape() const noexcept { return value_->shape(); }
  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

 private:
  friend class Tape;
  friend Var constant(Tensor value);

  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

// Untracked value; gradients never flow into it.
Var constant(Tensor value);

// Receives the upstream gradient and accumulates into one gradient slot per
// input (null when that input is untracked).
using BackwardFn =
    std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

// Leaf gradients produced by Tape::backward. Leaves that the output does not
// depend on hold zero tensors.
class Gradients {
 public:
  const Tensor& of(const Var& leaf) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;  // indexed by node id; empty for non-leaves
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input.
  Var leaf(Tensor value);

  // Appends a computed node. Used by the op library and by custom fused ops
  // (such as the focal loss) that supply their own derivative.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Backpropagates from a rank-0 output recorded on this tape. Every recorded
  // node is visited exactly once, in reverse insertion order.
  Gradients backward(const Var& output) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::size_t> inputs;  // node ids; npos for untracked inputs
    BackwardFn backward;
    Shape shape;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

// Builds a result Var; records on the first tracked operand's tape.
Var make_result(Tensor value, std::span<const Var> inputs, BackwardFn backward);

namespace ops {

// Clamp margin used by arccos_clamped.
inline constexpr double kArccosEps = 1e-6;

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scalar_mul(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var arccos_clamped(const Var& a);
Var softmax_lastdim(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var max_lastdim(const Var& a);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
// Numpy-style broadcast of `a` to `shape` (trailing-aligned, size-1 expands).
Var broadcast(const Var& a, const Shape& shape);
Var l2_norm_lastdim(const Var& a);
Var sum_axis(const Var& a, std::size_t axis);
Var reshape(const Var& a, Shape shape);

// Plain matrix product of 2-D tensors, also used outside the tape.
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace ops

// Maps the inputs to a rank-0 Var. Called with tracked leaves for the
// analytic gradient and with constants for the numeric one.
using ScalarFunction = std::function<Var(std::span<const Var>)>;

// max over all coordinates of |analytic - central| / max(1, |central|).
double check_gradients(const ScalarFunction& fn, std::span<const Tensor> point,
                       double h = 1e-5);

}  // namespace atmgcn

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ctr/matrix.hpp"
#include "ctr/parameter.hpp"

namespace ctr {

// A value in the computation graph. Parameter leaves alias the parameter's
// storage so their gradients land directly in Parameter::grad.
class Node {
 public:
  const Matrix& value() const { return param_value_ ? *param_value_ : value_; }
  bool requires_grad() const { return requires_grad_; }
  // Gradient accumulator, allocated (zeroed) on first use.
  Matrix& grad();
  bool has_grad() const { return grad_target_ != nullptr || !grad_.empty(); }

 private:
  friend class GradTape;
  Matrix value_;
  const Matrix* param_value_ = nullptr;
  Matrix* grad_target_ = nullptr;
  Matrix grad_;
  bool requires_grad_ = false;
};

using Var = std::shared_ptr<Node>;
using BackwardFn = std::function<void(const Matrix& out_grad)>;

// Ordered log of differentiable operations. Backward replays the log in exact
// reverse order. A non-recording tape evaluates values only and accepts
// read-only parameters, which makes it safe for concurrent inference.
class GradTape {
 public:
  explicit GradTape(bool recording = true) : recording_(recording) {}
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  bool recording() const { return recording_; }
  // Entries that will be visited by backward (ops with a gradient path).
  std::size_t size() const { return entries_.size(); }

  Var leaf(Parameter& p);
  // Read-only leaf; only valid on a non-recording tape.
  Var leaf(const Parameter& p);
  Var constant(Matrix m);

  // Adds an op output. When `requires_grad` is set on a recording tape, `fn`
  // is invoked during backward with the output's accumulated gradient.
  Var record(Matrix value, bool requires_grad, BackwardFn fn);

  // Seeds d(loss)/d(loss) and replays the log. Throws UsageError when nothing
  // was recorded, the loss is not 1x1, or the tape was already replayed.
  void backward(const Var& loss, double seed = 1.0);

  // Hook invoked before each replayed entry with its index; used by tests to
  // observe replay order.
  std::function<void(std::size_t)> on_replay;

 private:
  struct Entry {
    Var out;
    BackwardFn fn;
  };
  bool recording_;
  bool replayed_ = false;
  std::size_t ops_recorded_ = 0;
  std::vector<Entry> entries_;
};

bool any_requires_grad(std::initializer_list<Var> vars);

namespace ops {

Var matmul(GradTape& t, const Var& a, const Var& b);
Var add(GradTape& t, const Var& a, const Var& b);
// a (R x C) + row vector (1 x C) broadcast over rows.
Var add_row(GradTape& t, const Var& a, const Var& row);
Var relu(GradTape& t, const Var& a);
// Horizontal concatenation of matrices with equal row counts.
Var hconcat(GradTape& t, const std::vector<Var>& parts);
Var reshape(GradTape& t, const Var& a, std::size_t rows, std::size_t cols);
// Elementwise square; sum of all elements. Small helpers for scalar losses.
Var square(GradTape& t, const Var& a);
Var sum(GradTape& t, const Var& a);

}  // namespace ops

}  // namespace ctr

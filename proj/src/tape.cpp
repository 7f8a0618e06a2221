#include "ctr/tape.hpp"

#include <algorithm>

#include "ctr/errors.hpp"

namespace ctr {

Matrix& Node::grad() {
  if (grad_target_) return *grad_target_;
  if (grad_.empty()) grad_ = Matrix(value().rows(), value().cols());
  return grad_;
}

Var GradTape::leaf(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->param_value_ = &p.value;
  if (recording_) {
    n->grad_target_ = &p.grad;
    n->requires_grad_ = true;
  }
  return n;
}

Var GradTape::leaf(const Parameter& p) {
  if (recording_) throw UsageError("read-only parameter '" + p.name + "' on a recording tape");
  auto n = std::make_shared<Node>();
  n->param_value_ = &p.value;
  return n;
}

Var GradTape::constant(Matrix m) {
  auto n = std::make_shared<Node>();
  n->value_ = std::move(m);
  return n;
}

Var GradTape::record(Matrix value, bool requires_grad, BackwardFn fn) {
  if (replayed_) throw UsageError("cannot record onto a tape that was already replayed");
  auto n = std::make_shared<Node>();
  n->value_ = std::move(value);
  ++ops_recorded_;
  n->requires_grad_ = recording_ && requires_grad;
  if (n->requires_grad_) entries_.push_back({n, std::move(fn)});
  return n;
}

void GradTape::backward(const Var& loss, double seed) {
  if (!recording_) throw UsageError("backward on a non-recording tape");
  if (ops_recorded_ == 0) throw UsageError("backward called without a recorded forward pass");
  if (replayed_) throw UsageError("tape was already replayed");
  if (loss->value().rows() != 1 || loss->value().cols() != 1) {
    throw UsageError("backward requires a scalar loss, got " + loss->value().shape_str());
  }
  replayed_ = true;
  if (!loss->requires_grad()) return;
  loss->grad()[0] += seed;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (on_replay) on_replay(i);
    Entry& e = entries_[i];
    if (e.out->has_grad()) e.fn(e.out->grad());
  }
  entries_.clear();
}

bool any_requires_grad(std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [](const Var& v) { return v->requires_grad(); });
}

namespace ops {

Var matmul(GradTape& t, const Var& a, const Var& b) {
  return t.record(ctr::matmul(a->value(), b->value()), any_requires_grad({a, b}),
                  [a, b](const Matrix& g) {
                    if (a->requires_grad()) accumulate(a->grad(), matmul_nt(g, b->value()));
                    if (b->requires_grad()) accumulate(b->grad(), matmul_tn(a->value(), g));
                  });
}

Var add(GradTape& t, const Var& a, const Var& b) {
  return t.record(ctr::add(a->value(), b->value()), any_requires_grad({a, b}),
                  [a, b](const Matrix& g) {
                    if (a->requires_grad()) accumulate(a->grad(), g);
                    if (b->requires_grad()) accumulate(b->grad(), g);
                  });
}

Var add_row(GradTape& t, const Var& a, const Var& row) {
  const Matrix& x = a->value();
  const Matrix& r = row->value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("add_row: cannot broadcast " + r.shape_str() + " over " + x.shape_str());
  }
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += r[j];
  }
  return t.record(std::move(out), any_requires_grad({a, row}), [a, row](const Matrix& g) {
    if (a->requires_grad()) accumulate(a->grad(), g);
    if (row->requires_grad()) {
      Matrix& rg = row->grad();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) rg[j] += g(i, j);
    }
  });
}

Var relu(GradTape& t, const Var& a) {
  Matrix out = a->value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), a->requires_grad(), [a](const Matrix& g) {
    const Matrix& x = a->value();
    Matrix& ag = a->grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ag[i] += g[i];
  });
}

Var hconcat(GradTape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hconcat of zero parts");
  const std::size_t rows = parts.front()->value().rows();
  std::size_t cols = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p->value().rows() != rows) throw ShapeError("hconcat: row counts differ");
    cols += p->value().cols();
    needs = needs || p->requires_grad();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Matrix& v = p->value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + offset);
    offset += v.cols();
  }
  return t.record(std::move(out), needs, [parts](const Matrix& g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p->value().cols();
      if (p->requires_grad()) {
        Matrix& pg = p->grad();
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) pg(i, j) += g(i, off + j);
      }
      off += c;
    }
  });
}

Var reshape(GradTape& t, const Var& a, std::size_t rows, std::size_t cols) {
  Matrix out = a->value();
  out.reshape(rows, cols);
  return t.record(std::move(out), a->requires_grad(), [a](const Matrix& g) {
    Matrix& ag = a->grad();
    for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i];
  });
}

Var square(GradTape& t, const Var& a) {
  Matrix out = a->value();
  for (double& v : out.data()) v *= v;
  return t.record(std::move(out), a->requires_grad(), [a](const Matrix& g) {
    const Matrix& x = a->value();
    Matrix& ag = a->grad();
    for (std::size_t i = 0; i < g.size(); ++i) ag[i] += 2.0 * x[i] * g[i];
  });
}

Var sum(GradTape& t, const Var& a) {
  double s = 0.0;
  for (double v : a->value().data()) s += v;
  return t.record(Matrix::scalar(s), a->requires_grad(), [a](const Matrix& g) {
    Matrix& ag = a->grad();
    for (double& v : ag.data()) v += g[0];
  });
}

}  // namespace ops

}  // namespace ctr

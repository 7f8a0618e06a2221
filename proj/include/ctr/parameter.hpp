#pragma once

#include <cstdint>
#include <string>

#include "ctr/matrix.hpp"

namespace ctr {

// A learnable tensor with its gradient accumulator and Adam moment state.
// value, grad, m and v always share one shape.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix init);

  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;
  std::uint64_t step_count = 0;
  // Frozen parameters keep their value; the optimizer skips them.
  bool frozen = false;

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update. The gradient is left untouched.
void adam_step(Parameter& p, double lr, const AdamConfig& cfg = {});

// lr0 * gamma^floor(epoch / step_size).
double steplr(double lr0, std::uint64_t epoch, std::uint64_t step_size, double gamma);

}  // namespace ctr

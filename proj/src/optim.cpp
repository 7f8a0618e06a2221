#include <cmath>

#include "ctr/errors.hpp"
#include "ctr/parameter.hpp"

namespace ctr {

Parameter::Parameter(std::string n, Matrix init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(value.rows(), value.cols()),
      m(value.rows(), value.cols()),
      v(value.rows(), value.cols()) {}

void adam_step(Parameter& p, double lr, const AdamConfig& cfg) {
  if (!(lr > 0.0)) throw ArgumentError("adam_step: learning rate must be positive");
  if (!all_finite(p.grad.data())) {
    throw TrainingError("non-finite gradient in parameter '" + p.name + "' at step " +
                        std::to_string(p.step_count + 1));
  }
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  auto value = p.value.data();
  auto grad = p.grad.data();
  auto m = p.m.data();
  auto v = p.v.data();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

double steplr(double lr0, std::uint64_t epoch, std::uint64_t step_size, double gamma) {
  if (step_size == 0) throw ArgumentError("steplr: step_size must be positive");
  return lr0 * std::pow(gamma, static_cast<double>(epoch / step_size));
}

}  // namespace ctr

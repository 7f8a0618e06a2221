#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctr/data.hpp"
#include "ctr/model.hpp"

namespace ctr {

struct ParamGradError {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 compare on an absolute scale.
  double rel_floor = 1e-6;
  // Test hook: negate the analytic gradient of the fusion bias.
  bool corrupt = false;
};

// |analytic - numeric| / max(|analytic|, |numeric|, rel_floor).
double relative_error(double analytic, double numeric, double rel_floor);

// Compares the backward pass against central differences
// (L(theta + h) - L(theta - h)) / 2h for every scalar of every parameter.
// Parameter values are restored afterwards.
GradCheckReport grad_check(const ModelConfig& cfg, ModelParams& params, const Batch& batch,
                           const GradCheckOptions& opts = {});

// 4 categorical + 2 dense fields (N = 6), D = 4, 2 heads, CIN (3, 3), DNN (8, 4).
ModelConfig tiny_config(std::uint64_t seed = 11);
// `size` random examples over tiny_config's fields.
Batch tiny_batch(const ModelConfig& cfg, std::size_t size = 4, std::uint64_t seed = 5);
// init_params with every tensor redrawn from Normal(0, scale^2) so all
// branches carry signal; fusion weights stay zero when `zero_fusion` is set.
ModelParams gradcheck_params(const ModelConfig& cfg, double scale = 0.5, bool zero_fusion = false);

}  // namespace ctr

#include "ctr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ctr {

double relative_error(double analytic, double numeric, double rel_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), rel_floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ModelConfig& cfg, ModelParams& params, const Batch& batch,
                           const GradCheckOptions& opts) {
  params.zero_grads();
  loss_and_backward(batch, params, cfg);
  if (opts.corrupt) {
    for (double& g : params.fuse_bias.grad.data()) g = -g;
  }

  GradCheckReport report;
  for (Parameter* p : params.all()) {
    ParamGradError pe;
    pe.name = p->name;
    pe.entries = p->size();
    auto values = p->value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + opts.h;
      const double up = loss_only(batch, params, cfg);
      values[i] = saved - opts.h;
      const double down = loss_only(batch, params, cfg);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.h);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric, opts.rel_floor);
      if (err > pe.max_rel_error || i == 0) {
        pe.max_rel_error = std::max(pe.max_rel_error, err);
        pe.worst_index = i;
        pe.analytic = analytic;
        pe.numeric = numeric;
      }
    }
    report.entries += pe.entries;
    report.max_rel_error = std::max(report.max_rel_error, pe.max_rel_error);
    report.params.push_back(std::move(pe));
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.num_categorical = 4;
  cfg.num_dense = 2;
  cfg.vocab_sizes = {3, 3, 3, 3};
  cfg.embed_dim = 4;
  cfg.num_heads = 2;
  cfg.head_dim = 2;
  cfg.cin_layers = {3, 3};
  cfg.dnn_layers = {8, 4};
  cfg.seed = seed;
  return cfg;
}

Batch tiny_batch(const ModelConfig& cfg, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b;
  b.size = size;
  b.num_categorical = cfg.num_categorical;
  b.num_dense = cfg.num_dense;
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t f = 0; f < cfg.num_categorical; ++f) {
      std::uniform_int_distribution<std::uint32_t> idx(0, static_cast<std::uint32_t>(cfg.vocab_sizes[f]));
      b.cat_idx.push_back(idx(rng));
    }
    std::uniform_int_distribution<std::int64_t> raw(0, 50);
    for (std::size_t j = 0; j < cfg.num_dense; ++j) b.dense_val.push_back(transform_dense(raw(rng)));
    b.labels.push_back(static_cast<double>(i % 2));
  }
  return b;
}

ModelParams gradcheck_params(const ModelConfig& cfg, double scale, bool zero_fusion) {
  ModelParams p = init_params(cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, scale);
  for (Parameter* q : p.all()) {
    const bool fusion = q->name.rfind("fuse.", 0) == 0;
    for (double& v : q->value.data()) v = (fusion && zero_fusion) ? 0.0 : normal(rng);
    if (q->name == "ln.gain" && !(fusion && zero_fusion)) {
      for (double& v : q->value.data()) v += 1.0;
    }
  }
  return p;
}

}  // namespace ctr

#include "ctr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <type_traits>

#include "ctr/errors.hpp"

namespace ctr {

Ablation parse_ablation(std::string_view name) {
  if (name == "none") return Ablation::None;
  if (name == "xdeepfm") return Ablation::XDeepFM;
  if (name == "deepfm") return Ablation::DeepFM;
  if (name == "lr") return Ablation::FirstOrder;
  throw ArgumentError("unknown ablation '" + std::string(name) +
                      "' (expected none, xdeepfm, deepfm or lr)");
}

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::XDeepFM: return "xdeepfm";
    case Ablation::DeepFM: return "deepfm";
    case Ablation::FirstOrder: return "lr";
  }
  return "none";
}

std::size_t ModelConfig::cin_width() const {
  return std::accumulate(cin_layers.begin(), cin_layers.end(), std::size_t{0});
}

void ModelConfig::apply_ablation(Ablation a) {
  use_attention = true;
  head = FirstOrderHead::FM;
  cin_fusion = true;
  dnn_fusion = true;
  switch (a) {
    case Ablation::None: break;
    case Ablation::XDeepFM:
      use_attention = false;
      head = FirstOrderHead::LR;
      break;
    case Ablation::DeepFM:
      use_attention = false;
      cin_fusion = false;
      break;
    case Ablation::FirstOrder:
      use_attention = false;
      head = FirstOrderHead::LR;
      cin_fusion = false;
      dnn_fusion = false;
      break;
  }
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ArgumentError("model config: " + msg); };
  if (num_fields() == 0) fail("at least one field is required");
  if (vocab_sizes.size() != num_categorical) fail("vocab_sizes must have one entry per categorical field");
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (cin_layers.empty() || std::find(cin_layers.begin(), cin_layers.end(), 0) != cin_layers.end())
    fail("cin_layers must be a non-empty list of positive sizes");
  if (dnn_layers.empty() || std::find(dnn_layers.begin(), dnn_layers.end(), 0) != dnn_layers.end())
    fail("dnn_layers must be a non-empty list of positive sizes");
  if (num_heads == 0 || head_dim == 0) fail("num_heads and head_dim must be positive");
  if (num_heads * head_dim != embed_dim)
    fail("num_heads * head_dim (" + std::to_string(num_heads * head_dim) + ") must equal embed_dim (" +
         std::to_string(embed_dim) + ")");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

// --- parameters -------------------------------------------------------------

namespace {

template <typename Self, typename Out>
void collect(Self& s, Out& out) {
  auto push = [&](auto& p) {
    if (!p.value.empty()) out.push_back(&p);
  };
  for (auto& p : s.cat_embed) push(p);
  for (auto& p : s.dense_embed) push(p);
  push(s.fm_bias);
  for (auto& p : s.cat_linear) push(p);
  push(s.dense_linear);
  for (auto& p : s.cin_filters) push(p);
  for (auto& p : s.attn_query) push(p);
  for (auto& p : s.attn_key) push(p);
  for (auto& p : s.attn_value) push(p);
  push(s.attn_out);
  push(s.ln_gain);
  push(s.ln_bias);
  for (auto& l : s.dnn) {
    push(l.weight);
    push(l.bias);
  }
  push(s.fuse_fm);
  push(s.fuse_cin);
  push(s.fuse_dnn);
  push(s.fuse_bias);
}

}  // namespace

std::vector<Parameter*> ModelParams::all() {
  std::vector<Parameter*> out;
  collect(*this, out);
  return out;
}

std::vector<const Parameter*> ModelParams::all() const {
  std::vector<const Parameter*> out;
  collect(*this, out);
  return out;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto* p : all()) n += p->size();
  return n;
}

void ModelParams::zero_grads() {
  for (auto* p : all()) p->zero_grad();
}

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, cfg.init_std);
  auto randn = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) v = normal(rng);
    return m;
  };
  const std::size_t n = cfg.num_fields();
  const std::size_t d = cfg.embed_dim;

  ModelParams p;
  for (std::size_t f = 0; f < cfg.num_categorical; ++f)
    p.cat_embed.emplace_back("embed.cat." + std::to_string(f), randn(cfg.vocab_sizes[f] + 1, d));
  for (std::size_t f = 0; f < cfg.num_dense; ++f)
    p.dense_embed.emplace_back("embed.dense." + std::to_string(f), randn(1, d));
  p.fm_bias = Parameter("fm.w0", Matrix(1, 1));
  for (std::size_t f = 0; f < cfg.num_categorical; ++f)
    p.cat_linear.emplace_back("linear.cat." + std::to_string(f), Matrix(cfg.vocab_sizes[f] + 1, 1));
  if (cfg.num_dense > 0) p.dense_linear = Parameter("linear.dense", Matrix(cfg.num_dense, 1));

  std::size_t prev = n;
  for (std::size_t k = 0; k < cfg.cin_layers.size(); ++k) {
    p.cin_filters.emplace_back("cin." + std::to_string(k), randn(cfg.cin_layers[k], prev * n));
    prev = cfg.cin_layers[k];
  }

  if (cfg.use_attention) {
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      p.attn_query.emplace_back("attn.query." + std::to_string(h), randn(d, cfg.head_dim));
      p.attn_key.emplace_back("attn.key." + std::to_string(h), randn(d, cfg.head_dim));
      p.attn_value.emplace_back("attn.value." + std::to_string(h), randn(d, cfg.head_dim));
    }
    p.attn_out = Parameter("attn.out", randn(cfg.num_heads * cfg.head_dim, d));
    p.ln_gain = Parameter("ln.gain", Matrix(1, d, 1.0));
    p.ln_bias = Parameter("ln.bias", Matrix(1, d));
  }

  std::size_t width = n * d;
  for (std::size_t l = 0; l < cfg.dnn_layers.size(); ++l) {
    const std::size_t out = cfg.dnn_layers[l];
    p.dnn.push_back({Parameter("dnn." + std::to_string(l) + ".weight", randn(width, out)),
                     Parameter("dnn." + std::to_string(l) + ".bias", Matrix(1, out))});
    width = out;
  }

  p.fuse_fm = Parameter("fuse.fm", Matrix(1, 1));
  p.fuse_cin = Parameter("fuse.cin", Matrix(cfg.cin_width(), 1));
  p.fuse_dnn = Parameter("fuse.dnn", Matrix(width, 1));
  p.fuse_bias = Parameter("fuse.bias", Matrix(1, 1));
  p.fuse_cin.frozen = !cfg.cin_fusion;
  p.fuse_dnn.frozen = !cfg.dnn_fusion;
  return p;
}

double sigmoid_clamped(double logit) {
  const double z = std::clamp(logit, -kLogitClamp, kLogitClamp);
  return 1.0 / (1.0 + std::exp(-z));
}

// --- graph ops --------------------------------------------------------------

namespace graph {

namespace {

template <typename Params>
constexpr bool kMutable = !std::is_const_v<std::remove_reference_t<Params>>;

template <typename Params>
Var embed_impl(GradTape& t, const Batch& batch, Params& p, const ModelConfig& cfg) {
  const std::size_t n = cfg.num_fields();
  const std::size_t d = cfg.embed_dim;
  const std::size_t nc = batch.num_categorical;
  if (nc != cfg.num_categorical || batch.num_dense != cfg.num_dense) {
    throw ShapeError("batch has " + std::to_string(nc) + " categorical / " +
                     std::to_string(batch.num_dense) + " dense fields, model expects " +
                     std::to_string(cfg.num_categorical) + " / " + std::to_string(cfg.num_dense));
  }
  Matrix out(batch.size * n, d);
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t f = 0; f < nc; ++f) {
      const std::uint32_t idx = batch.cat(b, f);
      const Matrix& table = p.cat_embed[f].value;
      if (idx >= table.rows()) {
        throw LookupError("field " + std::to_string(f) + ": index " + std::to_string(idx) +
                          " out of range for table with " + std::to_string(table.rows()) + " rows");
      }
      std::copy_n(table.row(idx).begin(), d, out.row(b * n + f).begin());
    }
    for (std::size_t j = 0; j < batch.num_dense; ++j) {
      const double x = batch.dense(b, j);
      const auto v = p.dense_embed[j].value.row(0);
      auto o = out.row(b * n + nc + j);
      for (std::size_t k = 0; k < d; ++k) o[k] = x * v[k];
    }
  }
  BackwardFn fn;
  if constexpr (kMutable<Params>) {
    fn = [&batch, &p, n, d, nc](const Matrix& g) {
      for (std::size_t b = 0; b < batch.size; ++b) {
        for (std::size_t f = 0; f < nc; ++f) {
          auto dst = p.cat_embed[f].grad.row(batch.cat(b, f));
          const auto src = g.row(b * n + f);
          for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
        }
        for (std::size_t j = 0; j < batch.num_dense; ++j) {
          const double x = batch.dense(b, j);
          auto dst = p.dense_embed[j].grad.row(0);
          const auto src = g.row(b * n + nc + j);
          for (std::size_t k = 0; k < d; ++k) dst[k] += x * src[k];
        }
      }
    };
  }
  return t.record(std::move(out), kMutable<Params>, std::move(fn));
}

template <typename Params>
Var first_order_impl(GradTape& t, const Batch& batch, Params& p) {
  Matrix out(batch.size, 1);
  const double w0 = p.fm_bias.value[0];
  for (std::size_t b = 0; b < batch.size; ++b) {
    double s = w0;
    for (std::size_t f = 0; f < batch.num_categorical; ++f) s += p.cat_linear[f].value[batch.cat(b, f)];
    for (std::size_t j = 0; j < batch.num_dense; ++j) s += p.dense_linear.value[j] * batch.dense(b, j);
    out[b] = s;
  }
  BackwardFn fn;
  if constexpr (kMutable<Params>) {
    fn = [&batch, &p](const Matrix& g) {
      for (std::size_t b = 0; b < batch.size; ++b) {
        p.fm_bias.grad[0] += g[b];
        for (std::size_t f = 0; f < batch.num_categorical; ++f) p.cat_linear[f].grad[batch.cat(b, f)] += g[b];
        for (std::size_t j = 0; j < batch.num_dense; ++j) p.dense_linear.grad[j] += g[b] * batch.dense(b, j);
      }
    };
  }
  return t.record(std::move(out), kMutable<Params>, std::move(fn));
}

}  // namespace

Var embed(GradTape& t, const Batch& batch, ModelParams& p, const ModelConfig& cfg) {
  return embed_impl(t, batch, p, cfg);
}
Var embed(GradTape& t, const Batch& batch, const ModelParams& p, const ModelConfig& cfg) {
  return embed_impl(t, batch, p, cfg);
}
Var first_order(GradTape& t, const Batch& batch, ModelParams& p) { return first_order_impl(t, batch, p); }
Var first_order(GradTape& t, const Batch& batch, const ModelParams& p) {
  return first_order_impl(t, batch, p);
}

Var fm_pairwise(GradTape& t, const Var& emb, std::size_t num_fields) {
  const Matrix& e = emb->value();
  const std::size_t d = e.cols();
  const std::size_t batch = e.rows() / num_fields;
  Matrix out(batch, 1);
  std::vector<double> s(d);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(s.begin(), s.end(), 0.0);
    double sq = 0.0;
    for (std::size_t f = 0; f < num_fields; ++f) {
      const auto r = e.row(b * num_fields + f);
      for (std::size_t k = 0; k < d; ++k) {
        s[k] += r[k];
        sq += r[k] * r[k];
      }
    }
    double ss = 0.0;
    for (double v : s) ss += v * v;
    out[b] = 0.5 * (ss - sq);
  }
  return t.record(std::move(out), emb->requires_grad(), [emb, num_fields](const Matrix& g) {
    const Matrix& e = emb->value();
    Matrix& eg = emb->grad();
    const std::size_t d = e.cols();
    std::vector<double> s(d);
    for (std::size_t b = 0; b < g.rows(); ++b) {
      std::fill(s.begin(), s.end(), 0.0);
      for (std::size_t f = 0; f < num_fields; ++f) {
        const auto r = e.row(b * num_fields + f);
        for (std::size_t k = 0; k < d; ++k) s[k] += r[k];
      }
      for (std::size_t f = 0; f < num_fields; ++f) {
        const auto r = e.row(b * num_fields + f);
        auto dst = eg.row(b * num_fields + f);
        for (std::size_t k = 0; k < d; ++k) dst[k] += g[b] * (s[k] - r[k]);
      }
    }
  });
}

namespace {

// Z[i*N + j, :] = prev[i, :] * x0[j, :] for one example.
void outer_rows(const Matrix& prev, std::size_t prev_off, std::size_t h_prev, const Matrix& x0,
                std::size_t x0_off, std::size_t n, Matrix& z) {
  const std::size_t d = x0.cols();
  for (std::size_t i = 0; i < h_prev; ++i) {
    const auto a = prev.row(prev_off + i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto c = x0.row(x0_off + j);
      auto dst = z.row(i * n + j);
      for (std::size_t k = 0; k < d; ++k) dst[k] = a[k] * c[k];
    }
  }
}

}  // namespace

Var cin_layer(GradTape& t, const Var& prev, const Var& x0, const Var& filters, std::size_t num_fields) {
  const Matrix& xp = prev->value();
  const Matrix& x = x0->value();
  const Matrix& w = filters->value();
  const std::size_t n = num_fields;
  const std::size_t d = x.cols();
  const std::size_t batch = x.rows() / n;
  if (x.rows() % n != 0 || xp.cols() != d || xp.rows() % batch != 0) {
    throw ShapeError("cin_layer: inputs " + xp.shape_str() + " and " + x.shape_str() +
                     " do not match " + std::to_string(n) + " fields");
  }
  const std::size_t h_prev = xp.rows() / batch;
  const std::size_t h = w.rows();
  if (w.cols() != h_prev * n) {
    throw ShapeError("cin_layer: filter " + w.shape_str() + " expects H_prev*N = " +
                     std::to_string(h_prev * n));
  }
  Matrix out(batch * h, d);
  Matrix z(h_prev * n, d);
  for (std::size_t b = 0; b < batch; ++b) {
    outer_rows(xp, b * h_prev, h_prev, x, b * n, n, z);
    const Matrix ob = ctr::matmul(w, z);
    std::copy(ob.data().begin(), ob.data().end(), out.row(b * h).begin());
  }
  return t.record(std::move(out), any_requires_grad({prev, x0, filters}),
                  [prev, x0, filters, n, h, h_prev, d, batch](const Matrix& g) {
                    const Matrix& xp = prev->value();
                    const Matrix& x = x0->value();
                    const Matrix& w = filters->value();
                    Matrix z(h_prev * n, d);
                    Matrix gb(h, d);
                    for (std::size_t b = 0; b < batch; ++b) {
                      std::copy_n(g.row(b * h).begin(), h * d, gb.data().begin());
                      if (filters->requires_grad()) {
                        outer_rows(xp, b * h_prev, h_prev, x, b * n, n, z);
                        accumulate(filters->grad(), matmul_nt(gb, z));
                      }
                      if (!prev->requires_grad() && !x0->requires_grad()) continue;
                      const Matrix dz = matmul_tn(w, gb);
                      for (std::size_t i = 0; i < h_prev; ++i) {
                        const auto a = xp.row(b * h_prev + i);
                        for (std::size_t j = 0; j < n; ++j) {
                          const auto c = x.row(b * n + j);
                          const auto dzr = dz.row(i * n + j);
                          if (prev->requires_grad()) {
                            auto dst = prev->grad().row(b * h_prev + i);
                            for (std::size_t k = 0; k < d; ++k) dst[k] += dzr[k] * c[k];
                          }
                          if (x0->requires_grad()) {
                            auto dst = x0->grad().row(b * n + j);
                            for (std::size_t k = 0; k < d; ++k) dst[k] += dzr[k] * a[k];
                          }
                        }
                      }
                    }
                  });
}

Var sum_pool(GradTape& t, const Var& x, std::size_t group) {
  const Matrix& v = x->value();
  const std::size_t batch = v.rows() / group;
  Matrix out(batch, group);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double s = 0.0;
    for (double e : v.row(r)) s += e;
    out[r] = s;
  }
  return t.record(std::move(out), x->requires_grad(), [x](const Matrix& g) {
    Matrix& xg = x->grad();
    for (std::size_t r = 0; r < xg.rows(); ++r)
      for (double& e : xg.row(r)) e += g[r];
  });
}

namespace {

// Row-wise softmax of (q k^T) * scale for rows [off, off+n).
Matrix softmax_scores(const Matrix& q, const Matrix& k, std::size_t off, std::size_t n, double scale) {
  Matrix a(n, n);
  const std::size_t dk = q.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const auto qi = q.row(off + i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const auto kj = k.row(off + j);
      double s = 0.0;
      for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
      a(i, j) = s * scale;
      mx = std::max(mx, a(i, j));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      a(i, j) = std::exp(a(i, j) - mx);
      z += a(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) a(i, j) /= z;
  }
  return a;
}

}  // namespace

Var attention(GradTape& t, const Var& q, const Var& k, const Var& v, std::size_t group) {
  const Matrix& qm = q->value();
  const Matrix& km = k->value();
  const Matrix& vm = v->value();
  if (!qm.same_shape(km) || vm.rows() != qm.rows() || qm.rows() % group != 0) {
    throw ShapeError("attention: q " + qm.shape_str() + ", k " + km.shape_str() + ", v " + vm.shape_str());
  }
  const std::size_t batch = qm.rows() / group;
  const double scale = 1.0 / std::sqrt(static_cast<double>(qm.cols()));
  const std::size_t dv = vm.cols();
  Matrix out(qm.rows(), dv);
  auto weights = std::make_shared<std::vector<Matrix>>();
  weights->reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Matrix a = softmax_scores(qm, km, b * group, group, scale);
    for (std::size_t i = 0; i < group; ++i) {
      auto o = out.row(b * group + i);
      for (std::size_t j = 0; j < group; ++j) {
        const double aij = a(i, j);
        const auto vj = vm.row(b * group + j);
        for (std::size_t c = 0; c < dv; ++c) o[c] += aij * vj[c];
      }
    }
    weights->push_back(std::move(a));
  }
  const bool needs = any_requires_grad({q, k, v});
  if (!needs || !t.recording()) weights.reset();
  return t.record(std::move(out), needs, [q, k, v, group, scale, weights](const Matrix& g) {
    const Matrix& qm = q->value();
    const Matrix& km = k->value();
    const Matrix& vm = v->value();
    const std::size_t dk = qm.cols();
    const std::size_t dv = vm.cols();
    Matrix da(group, group);
    for (std::size_t b = 0; b < weights->size(); ++b) {
      const Matrix& a = (*weights)[b];
      const std::size_t off = b * group;
      // dA = dO V^T ; dV = A^T dO
      for (std::size_t i = 0; i < group; ++i) {
        const auto gi = g.row(off + i);
        for (std::size_t j = 0; j < group; ++j) {
          const auto vj = vm.row(off + j);
          double s = 0.0;
          for (std::size_t c = 0; c < dv; ++c) s += gi[c] * vj[c];
          da(i, j) = s;
          if (v->requires_grad()) {
            auto dst = v->grad().row(off + j);
            for (std::size_t c = 0; c < dv; ++c) dst[c] += a(i, j) * gi[c];
          }
        }
      }
      // dS = A o (dA - rowsum(dA o A)), scaled.
      for (std::size_t i = 0; i < group; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < group; ++j) dot += da(i, j) * a(i, j);
        for (std::size_t j = 0; j < group; ++j) {
          const double ds = a(i, j) * (da(i, j) - dot) * scale;
          if (ds == 0.0) continue;
          if (q->requires_grad()) {
            auto dst = q->grad().row(off + i);
            const auto kj = km.row(off + j);
            for (std::size_t c = 0; c < dk; ++c) dst[c] += ds * kj[c];
          }
          if (k->requires_grad()) {
            auto dst = k->grad().row(off + j);
            const auto qi = qm.row(off + i);
            for (std::size_t c = 0; c < dk; ++c) dst[c] += ds * qi[c];
          }
        }
      }
    }
  });
}

Var layer_norm(GradTape& t, const Var& x, const Var& gain, const Var& bias, double eps) {
  const Matrix& xm = x->value();
  const std::size_t d = xm.cols();
  const Matrix& gm = gain->value();
  const Matrix& bm = bias->value();
  if (gm.rows() != 1 || gm.cols() != d || !gm.same_shape(bm)) {
    throw ShapeError("layer_norm: gain/bias must be (1x" + std::to_string(d) + ")");
  }
  Matrix xhat(xm.rows(), d);
  std::vector<double> inv_std(xm.rows());
  Matrix out(xm.rows(), d);
  for (std::size_t r = 0; r < xm.rows(); ++r) {
    const auto row = xm.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (row[c] - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gm[c] + bm[c];
    }
  }
  return t.record(std::move(out), any_requires_grad({x, gain, bias}),
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix& g) {
                    const std::size_t d = g.cols();
                    const Matrix& gm = gain->value();
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      const auto gr = g.row(r);
                      if (gain->requires_grad()) {
                        Matrix& gg = gain->grad();
                        for (std::size_t c = 0; c < d; ++c) gg[c] += gr[c] * xhat(r, c);
                      }
                      if (bias->requires_grad()) {
                        Matrix& bg = bias->grad();
                        for (std::size_t c = 0; c < d; ++c) bg[c] += gr[c];
                      }
                      if (!x->requires_grad()) continue;
                      double mean_dxhat = 0.0;
                      double mean_dxhat_xhat = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = gr[c] * gm[c];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat(r, c);
                      }
                      mean_dxhat /= static_cast<double>(d);
                      mean_dxhat_xhat /= static_cast<double>(d);
                      auto dst = x->grad().row(r);
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = gr[c] * gm[c];
                        dst[c] += inv_std[r] * (dxh - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
                      }
                    }
                  });
}

Var logloss(GradTape& t, const Var& logits, std::span<const double> labels) {
  const Matrix& z = logits->value();
  if (z.cols() != 1 || z.rows() != labels.size()) {
    throw ShapeError("logloss: logits " + z.shape_str() + " vs " + std::to_string(labels.size()) + " labels");
  }
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(sigmoid_clamped(z[i]), kProbClamp, 1.0 - kProbClamp);
    total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  std::vector<double> y(labels.begin(), labels.end());
  return t.record(Matrix::scalar(total / n), logits->requires_grad(),
                  [logits, y = std::move(y), n](const Matrix& g) {
                    const Matrix& z = logits->value();
                    Matrix& zg = logits->grad();
                    for (std::size_t i = 0; i < y.size(); ++i) {
                      if (std::abs(z[i]) >= kLogitClamp) continue;
                      const double p = sigmoid_clamped(z[i]);
                      if (p <= kProbClamp || p >= 1.0 - kProbClamp) continue;
                      zg[i] += g[0] * (p - y[i]) / n;
                    }
                  });
}

}  // namespace graph

// --- forward composition ----------------------------------------------------

namespace {

template <typename Params>
ForwardGraph build_forward_impl(GradTape& t, const Batch& batch, Params& p, const ModelConfig& cfg) {
  const std::size_t n = cfg.num_fields();
  const std::size_t bsz = batch.size;
  ForwardGraph fg;
  fg.x0 = graph::embed(t, batch, p, cfg);

  fg.head = graph::first_order(t, batch, p);
  if (cfg.head == FirstOrderHead::FM) fg.head = ops::add(t, fg.head, graph::fm_pairwise(t, fg.x0, n));

  Var prev = fg.x0;
  std::vector<Var> pooled;
  for (std::size_t k = 0; k < cfg.cin_layers.size(); ++k) {
    prev = graph::cin_layer(t, prev, fg.x0, t.leaf(p.cin_filters[k]), n);
    fg.cin.push_back(prev);
    pooled.push_back(graph::sum_pool(t, prev, cfg.cin_layers[k]));
  }
  fg.pooled = pooled.size() == 1 ? pooled.front() : ops::hconcat(t, pooled);

  Var deep_in = fg.x0;
  if (cfg.use_attention) {
    std::vector<Var> heads;
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      Var q = ops::matmul(t, fg.x0, t.leaf(p.attn_query[h]));
      Var k = ops::matmul(t, fg.x0, t.leaf(p.attn_key[h]));
      Var v = ops::matmul(t, fg.x0, t.leaf(p.attn_value[h]));
      heads.push_back(graph::attention(t, q, k, v, n));
    }
    Var concat = heads.size() == 1 ? heads.front() : ops::hconcat(t, heads);
    Var projected = ops::matmul(t, concat, t.leaf(p.attn_out));
    Var residual = ops::add(t, projected, fg.x0);
    fg.attention = graph::layer_norm(t, residual, t.leaf(p.ln_gain), t.leaf(p.ln_bias), cfg.ln_eps);
    deep_in = fg.attention;
  }

  Var h = ops::reshape(t, deep_in, bsz, n * cfg.embed_dim);
  for (auto& layer : p.dnn) {
    h = ops::relu(t, ops::add_row(t, ops::matmul(t, h, t.leaf(layer.weight)), t.leaf(layer.bias)));
    fg.dnn.push_back(h);
  }

  Var logit = ops::matmul(t, fg.head, t.leaf(p.fuse_fm));
  logit = ops::add(t, logit, ops::matmul(t, fg.pooled, t.leaf(p.fuse_cin)));
  logit = ops::add(t, logit, ops::matmul(t, h, t.leaf(p.fuse_dnn)));
  fg.logits = ops::add_row(t, logit, t.leaf(p.fuse_bias));
  return fg;
}

}  // namespace

ForwardGraph build_forward(GradTape& t, const Batch& batch, ModelParams& p, const ModelConfig& cfg) {
  return build_forward_impl(t, batch, p, cfg);
}

ForwardGraph build_forward(GradTape& t, const Batch& batch, const ModelParams& p, const ModelConfig& cfg) {
  return build_forward_impl(t, batch, p, cfg);
}

ForwardTrace forward(const Batch& batch, const ModelParams& p, const ModelConfig& cfg) {
  GradTape t(false);
  const ForwardGraph fg = build_forward(t, batch, p, cfg);
  ForwardTrace tr;
  tr.x0 = fg.x0->value();
  for (const auto& c : fg.cin) tr.cin.push_back(c->value());
  tr.pooled = fg.pooled->value();
  if (fg.attention) tr.attention = fg.attention->value();
  for (const auto& a : fg.dnn) tr.dnn.push_back(a->value());
  tr.head = fg.head->value();
  tr.logits = fg.logits->value();
  tr.probabilities.reserve(batch.size);
  for (double z : tr.logits.data()) tr.probabilities.push_back(sigmoid_clamped(z));
  return tr;
}

std::vector<double> predict(const Batch& batch, const ModelParams& p, const ModelConfig& cfg) {
  GradTape t(false);
  const ForwardGraph fg = build_forward(t, batch, p, cfg);
  std::vector<double> out;
  out.reserve(batch.size);
  for (double z : fg.logits->value().data()) out.push_back(sigmoid_clamped(z));
  return out;
}

double loss_and_backward(const Batch& batch, ModelParams& p, const ModelConfig& cfg) {
  GradTape t(true);
  const ForwardGraph fg = build_forward(t, batch, p, cfg);
  Var loss = graph::logloss(t, fg.logits, batch.labels);
  const double value = loss->value()[0];
  t.backward(loss);
  return value;
}

double loss_only(const Batch& batch, const ModelParams& p, const ModelConfig& cfg) {
  GradTape t(false);
  const ForwardGraph fg = build_forward(t, batch, p, cfg);
  return graph::logloss(t, fg.logits, batch.labels)->value()[0];
}

// --- single-example conveniences --------------------------------------------

std::vector<double> fm_forward(const Batch& batch, const ModelParams& p, const ModelConfig& cfg) {
  GradTape t(false);
  Var x0 = graph::embed(t, batch, p, cfg);
  Var y = ops::add(t, graph::first_order(t, batch, p), graph::fm_pairwise(t, x0, cfg.num_fields()));
  const auto d = y->value().data();
  return {d.begin(), d.end()};
}

std::vector<double> fm_naive(const Batch& batch, const ModelParams& p, const ModelConfig& cfg) {
  struct Feature {
    double x;
    double w;
    std::span<const double> v;
  };
  std::vector<double> out;
  for (std::size_t b = 0; b < batch.size; ++b) {
    std::vector<Feature> feats;
    for (std::size_t f = 0; f < cfg.num_categorical; ++f) {
      const auto idx = batch.cat(b, f);
      feats.push_back({1.0, p.cat_linear[f].value[idx], p.cat_embed[f].value.row(idx)});
    }
    for (std::size_t j = 0; j < cfg.num_dense; ++j) {
      feats.push_back({batch.dense(b, j), p.dense_linear.value[j], p.dense_embed[j].value.row(0)});
    }
    double y = p.fm_bias.value[0];
    for (const auto& f : feats) y += f.w * f.x;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      for (std::size_t j = i + 1; j < feats.size(); ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < cfg.embed_dim; ++k) dot += feats[i].v[k] * feats[j].v[k];
        y += dot * feats[i].x * feats[j].x;
      }
    }
    out.push_back(y);
  }
  return out;
}

std::vector<Matrix> cin_forward(const Matrix& x0, std::span<const Matrix> filters) {
  GradTape t(false);
  Var base = t.constant(x0);
  Var prev = base;
  std::vector<Matrix> out;
  for (const auto& w : filters) {
    prev = graph::cin_layer(t, prev, base, t.constant(w), x0.rows());
    out.push_back(prev->value());
  }
  return out;
}

std::vector<double> cin_pool(std::span<const Matrix> layers) {
  std::vector<double> out;
  for (const auto& x : layers) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (double v : x.row(r)) s += v;
      out.push_back(s);
    }
  }
  return out;
}

Matrix attention_weights(const Matrix& q, const Matrix& k) {
  if (!q.same_shape(k)) throw ShapeError("attention_weights: q " + q.shape_str() + " vs k " + k.shape_str());
  return graph::softmax_scores(q, k, 0, q.rows(), 1.0 / std::sqrt(static_cast<double>(q.cols())));
}

Matrix mha_forward(const Matrix& x0, const ModelParams& p, const ModelConfig& cfg) {
  if (!cfg.use_attention) throw UsageError("mha_forward: attention is disabled in this config");
  if (x0.cols() != cfg.embed_dim) throw ShapeError("mha_forward: x0 " + x0.shape_str());
  GradTape t(false);
  Var x = t.constant(x0);
  std::vector<Var> heads;
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    heads.push_back(graph::attention(t, ops::matmul(t, x, t.leaf(p.attn_query[h])),
                                     ops::matmul(t, x, t.leaf(p.attn_key[h])),
                                     ops::matmul(t, x, t.leaf(p.attn_value[h])), x0.rows()));
  }
  Var concat = heads.size() == 1 ? heads.front() : ops::hconcat(t, heads);
  Var res = ops::add(t, ops::matmul(t, concat, t.leaf(p.attn_out)), x);
  return graph::layer_norm(t, res, t.leaf(p.ln_gain), t.leaf(p.ln_bias), cfg.ln_eps)->value();
}

std::vector<double> layer_norm(std::span<const double> row, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  const std::size_t d = row.size();
  GradTape t(false);
  Var out = graph::layer_norm(t, t.constant(Matrix(1, d, {row.begin(), row.end()})),
                              t.constant(Matrix(1, d, {gain.begin(), gain.end()})),
                              t.constant(Matrix(1, d, {bias.begin(), bias.end()})), eps);
  const auto v = out->value().data();
  return {v.begin(), v.end()};
}

std::vector<double> dnn_forward(std::span<const double> input, const ModelParams& p) {
  GradTape t(false);
  Var h = t.constant(Matrix(1, input.size(), {input.begin(), input.end()}));
  for (const auto& layer : p.dnn) {
    h = ops::relu(t, ops::add_row(t, ops::matmul(t, h, t.leaf(layer.weight)), t.leaf(layer.bias)));
  }
  const auto v = h->value().data();
  return {v.begin(), v.end()};
}

double fuse_predict(double y_fm, std::span<const double> pooled, std::span<const double> x_dnn,
                    const ModelParams& p) {
  if (pooled.size() != p.fuse_cin.size() || x_dnn.size() != p.fuse_dnn.size()) {
    throw ShapeError("fuse_predict: branch widths do not match the fusion weights");
  }
  double z = p.fuse_fm.value[0] * y_fm + p.fuse_bias.value[0];
  for (std::size_t i = 0; i < pooled.size(); ++i) z += p.fuse_cin.value[i] * pooled[i];
  for (std::size_t i = 0; i < x_dnn.size(); ++i) z += p.fuse_dnn.value[i] * x_dnn[i];
  return sigmoid_clamped(z);
}

}  // namespace ctr

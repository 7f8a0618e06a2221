#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctr/data.hpp"
#include "ctr/matrix.hpp"
#include "ctr/parameter.hpp"
#include "ctr/tape.hpp"

namespace ctr {

enum class FirstOrderHead : std::uint8_t { FM = 0, LR = 1 };

// Named presets over the ablation switches.
enum class Ablation : std::uint8_t {
  None,        // full model: FM head, attention, CIN, DNN
  XDeepFM,     // LR head, no attention
  DeepFM,      // FM head, no attention, CIN fusion weight frozen at zero
  FirstOrder,  // LR head only; CIN and DNN fusion weights frozen at zero
};

Ablation parse_ablation(std::string_view name);
std::string_view ablation_name(Ablation a);

struct ModelConfig {
  std::size_t num_categorical = 26;
  std::size_t num_dense = 13;
  // Bucket count per categorical field; embedding tables get one extra row
  // (index 0) for OOV.
  std::vector<std::size_t> vocab_sizes;
  std::size_t embed_dim = 8;
  std::vector<std::size_t> cin_layers{128, 128};
  std::size_t num_heads = 2;
  std::size_t head_dim = 4;
  std::vector<std::size_t> dnn_layers{256, 128};
  bool use_attention = true;
  FirstOrderHead head = FirstOrderHead::FM;
  bool cin_fusion = true;
  bool dnn_fusion = true;
  double ln_eps = 1e-5;
  double init_std = 0.01;
  std::uint64_t seed = 42;

  std::size_t num_fields() const { return num_categorical + num_dense; }
  std::size_t cin_width() const;
  void apply_ablation(Ablation a);
  // Throws ArgumentError when sizes are zero or heads * head_dim != embed_dim.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct DnnLayer {
  Parameter weight;  // (in, out)
  Parameter bias;    // (1, out)
};

struct ModelParams {
  std::vector<Parameter> cat_embed;    // per field (vocab + 1, D)
  std::vector<Parameter> dense_embed;  // per field (1, D)
  Parameter fm_bias;                   // w0 (1, 1)
  std::vector<Parameter> cat_linear;   // per field (vocab + 1, 1)
  Parameter dense_linear;              // (num_dense, 1); empty when num_dense == 0
  // Layer k packs the filters W^{k,h} (shape H_{k-1} x N) row-wise: row h of
  // the (H_k, H_{k-1} * N) matrix is W^{k,h} flattened row-major.
  std::vector<Parameter> cin_filters;
  std::vector<Parameter> attn_query;  // per head (D, d_k)
  std::vector<Parameter> attn_key;
  std::vector<Parameter> attn_value;
  Parameter attn_out;  // (h * d_k, D)
  Parameter ln_gain;   // (1, D)
  Parameter ln_bias;   // (1, D)
  std::vector<DnnLayer> dnn;
  Parameter fuse_fm;    // (1, 1)
  Parameter fuse_cin;   // (sum H_k, 1)
  Parameter fuse_dnn;   // (last DNN width, 1)
  Parameter fuse_bias;  // (1, 1)

  // Canonical order; used by the optimizer, checkpoints and grad checks.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t scalar_count() const;
  void zero_grads();
};

// Normal(0, init_std^2) for embeddings and projection/DNN weights from the
// config seed; zero for biases, w0, first-order weights and fusion weights;
// layer-norm gain 1. Fusion weights of disabled branches are frozen.
ModelParams init_params(const ModelConfig& cfg);

// Differentiable building blocks. Row layout for per-field tensors is
// (batch * N, D): example b occupies rows [b*N, (b+1)*N).
namespace graph {

Var embed(GradTape& t, const Batch& batch, ModelParams& p, const ModelConfig& cfg);
Var embed(GradTape& t, const Batch& batch, const ModelParams& p, const ModelConfig& cfg);
// w0 + sum_i w_i x_i, shape (B, 1).
Var first_order(GradTape& t, const Batch& batch, ModelParams& p);
Var first_order(GradTape& t, const Batch& batch, const ModelParams& p);
// 0.5 * sum_d [(sum_f e_fd)^2 - sum_f e_fd^2] per example, shape (B, 1).
Var fm_pairwise(GradTape& t, const Var& emb, std::size_t num_fields);
// One CIN layer: (B*H_prev, D) x (B*N, D) with (H, H_prev*N) filters -> (B*H, D).
Var cin_layer(GradTape& t, const Var& prev, const Var& x0, const Var& filters, std::size_t num_fields);
// Row sums per group of `group` rows: (B*H, D) -> (B, H).
Var sum_pool(GradTape& t, const Var& x, std::size_t group);
// softmax(Q K^T / sqrt(d_k)) V within each group of `group` rows.
Var attention(GradTape& t, const Var& q, const Var& k, const Var& v, std::size_t group);
// Per-row (x - mean) / sqrt(var + eps) * gain + bias, population variance.
Var layer_norm(GradTape& t, const Var& x, const Var& gain, const Var& bias, double eps);
// Clamped sigmoid cross-entropy averaged over rows; logits (B, 1).
Var logloss(GradTape& t, const Var& logits, std::span<const double> labels);

}  // namespace graph

inline constexpr double kLogitClamp = 30.0;
inline constexpr double kProbClamp = 1e-7;

double sigmoid_clamped(double logit);

struct ForwardTrace {
  Matrix x0;                      // (B*N, D)
  std::vector<Matrix> cin;        // X^k, (B*H_k, D)
  Matrix pooled;                  // p+, (B, sum H_k)
  Matrix attention;               // post residual + layer norm, (B*N, D); empty when disabled
  std::vector<Matrix> dnn;        // activations per DNN layer, (B, width)
  Matrix head;                    // y_FM (or LR head output), (B, 1)
  Matrix logits;                  // (B, 1), before clamping
  std::vector<double> probabilities;
};

// Graph outputs of one forward pass, for callers that need gradients.
struct ForwardGraph {
  Var x0;
  std::vector<Var> cin;
  Var pooled;
  Var attention;
  std::vector<Var> dnn;
  Var head;
  Var logits;
};

ForwardGraph build_forward(GradTape& t, const Batch& batch, ModelParams& p, const ModelConfig& cfg);
ForwardGraph build_forward(GradTape& t, const Batch& batch, const ModelParams& p,
                           const ModelConfig& cfg);

ForwardTrace forward(const Batch& batch, const ModelParams& p, const ModelConfig& cfg);
std::vector<double> predict(const Batch& batch, const ModelParams& p, const ModelConfig& cfg);

// Records forward + mean logloss on `t`, runs backward, returns the loss.
// Gradients accumulate into the parameters.
double loss_and_backward(const Batch& batch, ModelParams& p, const ModelConfig& cfg);
double loss_only(const Batch& batch, const ModelParams& p, const ModelConfig& cfg);

// --- single-example conveniences over the graph ops ------------------------

// FM head (w0 + linear + pairwise) per example via the O(nk) identity.
std::vector<double> fm_forward(const Batch& batch, const ModelParams& p, const ModelConfig& cfg);
// Literal O(n^2 k) evaluation of the same quantity.
std::vector<double> fm_naive(const Batch& batch, const ModelParams& p, const ModelConfig& cfg);
// X^1..X^L for one example; filters packed as in ModelParams::cin_filters.
std::vector<Matrix> cin_forward(const Matrix& x0, std::span<const Matrix> filters);
std::vector<double> cin_pool(std::span<const Matrix> layers);
// Attention weights softmax(q k^T / sqrt(d_k)) for one example.
Matrix attention_weights(const Matrix& q, const Matrix& k);
// Multi-head attention + residual + layer norm on one example.
Matrix mha_forward(const Matrix& x0, const ModelParams& p, const ModelConfig& cfg);
std::vector<double> layer_norm(std::span<const double> row, std::span<const double> gain,
                               std::span<const double> bias, double eps);
std::vector<double> dnn_forward(std::span<const double> input, const ModelParams& p);
double fuse_predict(double y_fm, std::span<const double> pooled, std::span<const double> x_dnn,
                    const ModelParams& p);

}  // namespace ctr

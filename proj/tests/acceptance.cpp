// Runs every acceptance criterion and prints one PASS/FAIL line per
// criterion. Exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctr/cli.hpp"
#include "ctr/gradcheck.hpp"
#include "ctr/metrics.hpp"
#include "ctr/model.hpp"
#include "ctr/trainer.hpp"

namespace fs = std::filesystem;
using ctr::Matrix;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ctr::Batch random_batch(const ctr::ModelConfig& cfg, std::size_t size, std::mt19937_64& rng) {
  ctr::Batch b;
  b.size = size;
  b.num_categorical = cfg.num_categorical;
  b.num_dense = cfg.num_dense;
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t f = 0; f < cfg.num_categorical; ++f)
      b.cat_idx.push_back(static_cast<std::uint32_t>(rng() % (cfg.vocab_sizes[f] + 1)));
    for (std::size_t j = 0; j < cfg.num_dense; ++j) b.dense_val.push_back(u(rng));
    b.labels.push_back(static_cast<double>(rng() % 2));
  }
  return b;
}

// --- 1 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const auto cfg = ctr::tiny_config();
  auto params = ctr::gradcheck_params(cfg);
  const auto batch = ctr::tiny_batch(cfg, 4);
  ctr::GradCheckOptions opts;
  opts.h = 1e-5;
  opts.tol = 1e-4;
  const auto rep = ctr::grad_check(cfg, params, batch, opts);
  const double secs = seconds_since(t0);
  return {rep.passed && rep.max_rel_error < 1e-4 && secs < 60.0,
          "N=" + std::to_string(cfg.num_fields()) + " entries=" + std::to_string(rep.entries) +
              " max_rel_error=" + fmt("%.3g", rep.max_rel_error) + " in " + fmt("%.2f", secs) + " s"};
}

// --- 2 ----------------------------------------------------------------------

Outcome fm_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ctr::ModelConfig cfg;
    cfg.num_categorical = 1 + rng() % 15;
    cfg.num_dense = rng() % 6;
    cfg.vocab_sizes.assign(cfg.num_categorical, 1 + rng() % 5);
    cfg.embed_dim = 1 + rng() % 8;
    cfg.num_heads = 1;
    cfg.head_dim = cfg.embed_dim;
    cfg.cin_layers = {1};
    cfg.dnn_layers = {1};
    cfg.use_attention = false;
    auto p = ctr::init_params(cfg);
    for (auto* prm : p.all())
      for (double& v : prm->value.data()) v = n(rng);
    const auto b = random_batch(cfg, 1, rng);
    worst = std::max(worst, std::abs(ctr::fm_forward(b, p, cfg)[0] - ctr::fm_naive(b, p, cfg)[0]));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 10.0,
          "1000 instances, max |diff|=" + fmt("%.3g", worst) + " in " + fmt("%.2f", secs) + " s"};
}

// --- 3 ----------------------------------------------------------------------

Outcome cin_oracle() {
  std::mt19937_64 rng(102);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t fields = 1 + rng() % 5, d = 1 + rng() % 6, layers = 1 + rng() % 3;
    Matrix x0(fields, d);
    for (double& v : x0.data()) v = n(rng);
    std::vector<Matrix> filters;
    std::size_t prev = fields;
    for (std::size_t k = 0; k < layers; ++k) {
      const std::size_t h = 1 + rng() % 4;
      Matrix w(h, prev * fields);
      for (double& v : w.data()) v = n(rng);
      filters.push_back(w);
      prev = h;
    }
    const auto got = ctr::cin_forward(x0, filters);
    Matrix xp = x0;
    for (std::size_t k = 0; k < filters.size(); ++k) {
      const Matrix& w = filters[k];
      Matrix next(w.rows(), d);
      for (std::size_t h = 0; h < w.rows(); ++h)
        for (std::size_t i = 0; i < xp.rows(); ++i)
          for (std::size_t j = 0; j < fields; ++j)
            for (std::size_t e = 0; e < d; ++e) next(h, e) += w(h, i * fields + j) * xp(i, e) * x0(j, e);
      worst = std::max(worst, ctr::max_abs_diff(got[k], next));
      xp = next;
    }
  }
  const auto hand = ctr::cin_forward(Matrix{{2}, {3}}, std::vector<Matrix>{Matrix(1, 4, 1.0)});
  const double hand_value = hand[0](0, 0);
  return {worst <= 1e-10 && hand_value == 25.0,
          "200 instances, max |diff|=" + fmt("%.3g", worst) + "; hand case X1=" + fmt("%g", hand_value)};
}

// --- 4 ----------------------------------------------------------------------

Outcome attention_invariants() {
  std::mt19937_64 rng(103);
  std::normal_distribution<double> n(0.0, 2.0);
  double row_sum_err = 0.0, convex_violation = 0.0, ln_mean = 0.0, ln_var = 0.0;
  bool uniform = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng() % 8, dk = 1 + rng() % 5;
    Matrix q(rows, dk), k(rows, dk), v(rows, dk);
    for (auto* m : {&q, &k, &v})
      for (double& x : m->data()) x = n(rng);
    const Matrix w = ctr::attention_weights(q, k);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (double x : w.row(r)) s += x;
      row_sum_err = std::max(row_sum_err, std::abs(s - 1.0));
    }
    ctr::GradTape t(false);
    const Matrix out = ctr::graph::attention(t, t.constant(q), t.constant(k), t.constant(v), rows)->value();
    for (std::size_t c = 0; c < dk; ++c) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t r = 0; r < rows; ++r) {
        lo = std::min(lo, v(r, c));
        hi = std::max(hi, v(r, c));
      }
      for (std::size_t r = 0; r < rows; ++r)
        convex_violation = std::max({convex_violation, lo - out(r, c), out(r, c) - hi});
    }

    Matrix same(rows, dk);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < dk; ++c) same(r, c) = q(0, c);
    const Matrix sw = ctr::attention_weights(same, same);
    for (double x : sw.data())
      uniform = uniform && x == 1.0 / static_cast<double>(rows);

    std::vector<double> row(8);
    for (double& x : row) x = n(rng) + 3.0;
    const auto ln = ctr::layer_norm(row, std::vector<double>(8, 1.0), std::vector<double>(8, 0.0), 1e-12);
    double mean = 0.0, var = 0.0;
    for (double x : ln) mean += x / 8.0;
    for (double x : ln) var += (x - mean) * (x - mean) / 8.0;
    ln_mean = std::max(ln_mean, std::abs(mean));
    ln_var = std::max(ln_var, std::abs(var - 1.0));
  }
  const bool pass = row_sum_err <= 1e-12 && uniform && convex_violation <= 1e-12 && ln_mean <= 1e-12 && ln_var <= 1e-6;
  return {pass, "row-sum err=" + fmt("%.2g", row_sum_err) + " uniform=" + (uniform ? "yes" : "no") +
                    " convex violation=" + fmt("%.2g", std::max(0.0, convex_violation)) +
                    " ln |mean|=" + fmt("%.2g", ln_mean) + " ln |var-1|=" + fmt("%.2g", ln_var)};
}

// --- 5 ----------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(104);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 99;
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % (trial % 2 ? 1000 : 4));
      y[i] = static_cast<double>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    if (ctr::auc(s, y) != ctr::auc_oracle(s, y)) ++mismatches;
  }
  const double ll_half = ctr::logloss(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0});
  const double ll_hand = ctr::logloss(std::vector<double>{0.8, 0.4}, std::vector<double>{1, 0});
  const bool pass = mismatches == 0 && std::abs(ll_half - std::log(2.0)) <= 1e-6 && std::abs(ll_hand - 0.366985) <= 1e-6;
  return {pass, "auc mismatches=" + std::to_string(mismatches) + "/1000; logloss " + fmt("%.6f", ll_half) +
                    " and " + fmt("%.6f", ll_hand)};
}

// --- shared synthetic setup -------------------------------------------------

struct Prepared {
  ctr::SyntheticData data;
  ctr::SplitResult parts;
  ctr::EncodedSet train;
  ctr::EncodedSet test;
  ctr::TrainConfig cfg;
};

Prepared prepare(const std::string& generator, std::uint64_t seed) {
  Prepared p;
  p.data = ctr::make_synthetic(generator, seed);
  p.parts = ctr::split(p.data.records, 0.8, seed);
  const auto vocab = ctr::FeatureVocab::build(p.parts.train, p.data.schema.num_categorical);
  p.train = ctr::encode(p.parts.train.records, vocab);
  p.test = ctr::encode(p.parts.test.records, vocab);
  p.cfg.seed = seed;
  p.cfg.lr = 0.05;
  p.cfg.epochs = 20;
  p.cfg.threads = 1;
  auto& m = p.cfg.model;
  m.num_categorical = p.data.schema.num_categorical;
  m.num_dense = p.data.schema.num_dense;
  m.vocab_sizes = vocab.bucket_counts();
  m.embed_dim = 8;
  m.num_heads = 2;
  m.head_dim = 4;
  m.cin_layers = {16, 16};
  m.dnn_layers = {256, 128};
  m.seed = seed;
  return p;
}

double best_auc(const ctr::FitResult& r) {
  double best = 0.0;
  for (const auto& e : r.reports) best = std::max(best, e.eval_auc);
  return best;
}

double best_logloss(const ctr::FitResult& r) {
  double best = INFINITY;
  for (const auto& e : r.reports) best = std::min(best, e.eval_logloss);
  return best;
}

// --- 6 ----------------------------------------------------------------------

Outcome init_anchor() {
  const auto p = prepare("planted", 42);
  const auto params = ctr::init_params(p.cfg.model);
  const auto ev = ctr::evaluate(p.test, params, p.cfg.model, p.cfg.eval_batch);
  const bool all_half = std::all_of(ev.predictions.begin(), ev.predictions.end(), [](double v) { return v == 0.5; });
  const double err = std::abs(ev.logloss - std::log(2.0));
  return {all_half && err <= 1e-12, std::to_string(ev.predictions.size()) + " predictions all 0.5: " +
                                        (all_half ? "yes" : "no") + ", |logloss - ln 2|=" + fmt("%.2g", err)};
}

// --- 7 ----------------------------------------------------------------------

Outcome learning_capability() {
  const auto t0 = Clock::now();
  const auto p = prepare("planted", 42);

  // Bayes-optimal scorer: the generator's own probability for each record.
  std::vector<double> bayes, labels;
  for (const auto& r : p.parts.test.records) {
    const bool agree = r.categorical[p.data.hidden_fields[0]] == r.categorical[p.data.hidden_fields[1]];
    bayes.push_back(1.0 / (1.0 + std::exp(-(p.data.signal * (agree ? 1.0 : 0.0) + p.data.offset))));
    labels.push_back(r.label);
  }
  const double bayes_auc = ctr::auc(bayes, labels);

  const auto full = ctr::fit(p.train, p.test, p.cfg);
  auto lr_cfg = p.cfg;
  lr_cfg.model.apply_ablation(ctr::Ablation::FirstOrder);
  const auto first_order = ctr::fit(p.train, p.test, lr_cfg);
  const double secs = seconds_since(t0);

  const double full_auc = best_auc(full), lr_auc = best_auc(first_order);
  const bool pass = full_auc >= 0.85 && lr_auc <= 0.60 && secs < 300.0;
  return {pass, "train/test " + std::to_string(p.train.size()) + "/" + std::to_string(p.test.size()) +
                    ", full model AUC=" + fmt("%.4f", full_auc) + " (gate >= 0.85), first-order AUC=" +
                    fmt("%.4f", lr_auc) + " (gate <= 0.60), Bayes-optimal AUC on this split=" +
                    fmt("%.4f", bayes_auc) + " (full/Bayes=" + fmt("%.3f", full_auc / bayes_auc) + "), " +
                    fmt("%.1f", secs) + " s"};
}

// --- 8 ----------------------------------------------------------------------

Outcome paired_ablation() {
  const auto p = prepare("planted-noise", 42);
  const auto full = ctr::fit(p.train, p.test, p.cfg);
  auto xd_cfg = p.cfg;
  xd_cfg.model.apply_ablation(ctr::Ablation::XDeepFM);
  const auto xd = ctr::fit(p.train, p.test, xd_cfg);
  const double a = best_logloss(full), b = best_logloss(xd);
  return {a <= b, "best eval logloss full=" + fmt("%.5f", a) + " xDeepFM=" + fmt("%.5f", b) +
                      "; best AUC full=" + fmt("%.4f", best_auc(full)) + " xDeepFM=" + fmt("%.4f", best_auc(xd))};
}

// --- 9 ----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "ctr_forge_acceptance_determinism";
  fs::remove_all(dir);
  std::ostringstream out, err;
  const std::vector<std::string> first{"ctr_forge", "train", "--synthetic", "planted", "--epochs", "3",
                                       "--cin-layers", "16,16", "--out", (dir / "a").string()};
  const std::vector<std::string> replay{"ctr_forge", "train", "--config", (dir / "a" / "manifest.txt").string(),
                                        "--out", (dir / "b").string()};
  const int c1 = ctr::run_cli(first, out, err);
  const int c2 = c1 == 0 ? ctr::run_cli(replay, out, err) : -1;
  const std::string a = slurp(dir / "a" / "metrics.csv"), b = slurp(dir / "b" / "metrics.csv");
  fs::remove_all(dir);
  const bool pass = c1 == 0 && c2 == 0 && !a.empty() && a == b;
  return {pass, "exit codes " + std::to_string(c1) + "/" + std::to_string(c2) + ", metrics.csv " +
                    std::to_string(a.size()) + " bytes, identical: " + (a == b ? "yes" : "no") +
                    (err.str().empty() ? "" : "; stderr: " + err.str())};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "FM oracle equivalence", fm_oracle},
      {3, "CIN oracle equivalence", cin_oracle},
      {4, "attention invariants", attention_invariants},
      {5, "AUC/Logloss oracles", metric_oracles},
      {6, "init anchor", init_anchor},
      {7, "learning capability", learning_capability},
      {8, "paired ablation direction", paired_ablation},
      {9, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
              << std::endl;
  }
  std::cout << "SKIP criterion 10 (extended Criteo run): opt-in, not gated; see README" << std::endl;
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}

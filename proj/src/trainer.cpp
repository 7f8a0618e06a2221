#include "ctr/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>
#include <thread>

#include "ctr/errors.hpp"
#include "ctr/metrics.hpp"

namespace ctr {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string census(const ModelParams& p) {
  std::string out;
  for (const Parameter* q : p.all()) {
    if (!out.empty()) out += ", ";
    out += q->name + q->value.shape_str();
  }
  return out;
}

}  // namespace

std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::size_t epoch) {
  // splitmix64 finalizer over (seed, epoch).
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

EvalResult evaluate(const EncodedSet& test, const ModelParams& params, const ModelConfig& model,
                    std::size_t eval_batch, std::size_t threads) {
  if (test.size() == 0) throw MetricError("evaluation set is empty");
  EvalResult res;
  res.predictions.resize(test.size());

  std::vector<Batch> batches;
  {
    BatchIterator it(test, eval_batch);
    Batch b;
    while (it.next(b)) batches.push_back(b);
  }
  auto run = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < batches.size(); i += stride) {
      const auto preds = predict(batches[i], params, model);
      std::copy(preds.begin(), preds.end(), res.predictions.begin() + static_cast<std::ptrdiff_t>(i * eval_batch));
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, batches.size());
  if (threads <= 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(run, w, threads);
  }
  res.auc = auc(res.predictions, test.labels);
  res.logloss = logloss(res.predictions, test.labels);
  return res;
}

FitResult fit(const EncodedSet& train, const EncodedSet& test, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  if (train.size() == 0) throw ArgumentError("fit: training set is empty");
  ModelParams params = init_params(cfg.model);
  FitResult result;
  result.best = params;
  result.last = params;

  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = steplr(cfg.lr, epoch, cfg.step_size, cfg.gamma);
    BatchIterator it(train, cfg.train_batch, epoch_shuffle_seed(cfg.seed, epoch));
    Batch batch;
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    while (it.next(batch)) {
      params.zero_grads();
      const double loss = loss_and_backward(batch, params, cfg.model);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + "; parameters: " + census(params));
      }
      for (Parameter* p : params.all()) {
        if (!p->frozen) adam_step(*p, lr, cfg.adam);
      }
      loss_sum += loss * static_cast<double>(batch.size);
      ++batch_index;
    }

    EpochReport rep;
    rep.epoch = epoch;
    rep.lr = lr;
    rep.train_logloss = loss_sum / static_cast<double>(train.size());
    const EvalResult ev = evaluate(test, params, cfg.model, cfg.eval_batch, cfg.threads);
    rep.eval_auc = ev.auc;
    rep.eval_logloss = ev.logloss;
    rep.seconds = seconds_since(t0);
    result.reports.push_back(rep);

    if (rep.eval_logloss < best_loss) {
      best_loss = rep.eval_logloss;
      result.best = params;
      result.best_epoch = result.reports.size() - 1;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (on_epoch) on_epoch(rep);
    if (cfg.early_stopping && since_best >= cfg.patience) break;
  }
  result.last = std::move(params);
  return result;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_metrics_csv(std::ostream& out, std::span<const EpochReport> reports, bool wall_time) {
  out << "epoch,train_logloss,eval_auc,eval_logloss,lr,seconds\n";
  for (const auto& r : reports) {
    out << r.epoch << ',' << format_double(r.train_logloss) << ',' << format_double(r.eval_auc) << ','
        << format_double(r.eval_logloss) << ',' << format_double(r.lr) << ','
        << format_double(wall_time ? r.seconds : 0.0) << '\n';
  }
}

TrainConfig with_sweep_value(const TrainConfig& base, std::string_view param, double value) {
  TrainConfig cfg = base;
  auto as_count = [&](double v) {
    if (!(v >= 1.0) || v != std::floor(v)) {
      throw ArgumentError(std::string(param) + " must be a positive integer, got " + format_double(v));
    }
    return static_cast<std::size_t>(v);
  };
  if (param == "lr") {
    if (!(value > 0.0)) throw ArgumentError("lr must be positive");
    cfg.lr = value;
  } else if (param == "embed_dim") {
    cfg.model.embed_dim = as_count(value);
    if (cfg.model.embed_dim % cfg.model.num_heads != 0) {
      throw ArgumentError("embed_dim " + format_double(value) + " is not divisible by " +
                          std::to_string(cfg.model.num_heads) + " heads");
    }
    cfg.model.head_dim = cfg.model.embed_dim / cfg.model.num_heads;
  } else if (param == "num_heads") {
    cfg.model.num_heads = as_count(value);
    if (cfg.model.embed_dim % cfg.model.num_heads != 0) {
      throw ArgumentError(std::to_string(cfg.model.num_heads) + " heads do not divide embed_dim " +
                          std::to_string(cfg.model.embed_dim));
    }
    cfg.model.head_dim = cfg.model.embed_dim / cfg.model.num_heads;
  } else {
    throw ArgumentError("unknown sweep parameter '" + std::string(param) +
                        "' (expected lr, embed_dim or num_heads)");
  }
  cfg.model.validate();
  return cfg;
}

SweepReport sweep(std::string_view param, std::span<const double> values, const TrainConfig& base,
                  const EncodedSet& train, const EncodedSet& test) {
  // Validate every value before spending time on training.
  std::vector<TrainConfig> configs;
  for (double v : values) configs.push_back(with_sweep_value(base, param, v));

  SweepReport report;
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const FitResult fr = fit(train, test, configs[i]);
    SweepRow row;
    row.param = std::string(param);
    row.value = values[i];
    row.epochs_run = fr.reports.size();
    if (fr.best_epoch) {
      row.best_auc = fr.reports[*fr.best_epoch].eval_auc;
      row.best_logloss = fr.reports[*fr.best_epoch].eval_logloss;
    } else {
      const EvalResult ev = evaluate(test, fr.best, configs[i].model, configs[i].eval_batch, configs[i].threads);
      row.best_auc = ev.auc;
      row.best_logloss = ev.logloss;
    }
    row.cumulative_seconds = seconds_since(t0);
    report.rows.push_back(row);
  }
  report.auc_nondecreasing = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    if (report.rows[i].best_auc < report.rows[i - 1].best_auc) report.auc_nondecreasing = false;
  }
  return report;
}

void write_sweep_csv(std::ostream& out, const SweepReport& report) {
  out << "param,value,best_auc,best_logloss,epochs_run\n";
  for (const auto& r : report.rows) {
    out << r.param << ',' << format_double(r.value) << ',' << format_double(r.best_auc) << ','
        << format_double(r.best_logloss) << ',' << r.epochs_run << '\n';
  }
}

}  // namespace ctr

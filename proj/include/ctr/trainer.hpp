#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctr/data.hpp"
#include "ctr/model.hpp"
#include "ctr/parameter.hpp"

namespace ctr {

struct TrainConfig {
  double lr = 0.05;
  std::size_t epochs = 100;
  std::size_t train_batch = 2048;
  std::size_t eval_batch = 4096;
  double split_ratio = 0.8;
  std::uint64_t step_size = 30;
  double gamma = 0.5;
  bool early_stopping = false;
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  AdamConfig adam;
  // Vocabulary construction.
  std::size_t min_freq = 10;
  std::size_t bucket_cap = 1'000'000;
  // Stratified subsample size before the split; 0 keeps every record.
  std::size_t sample = 0;
  // Evaluation worker threads; 0 picks the hardware concurrency.
  std::size_t threads = 0;
  ModelConfig model;
};

struct EpochReport {
  std::size_t epoch = 0;
  double train_logloss = 0.0;
  double eval_auc = 0.0;
  double eval_logloss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct EvalResult {
  double auc = 0.0;
  double logloss = 0.0;
  std::vector<double> predictions;
};

struct FitResult {
  ModelParams best;
  ModelParams last;
  std::vector<EpochReport> reports;
  // Index into `reports` of the lowest eval logloss; empty when no epoch ran.
  std::optional<std::size_t> best_epoch;
};

using EpochCallback = std::function<void(const EpochReport&)>;

// Mini-batch Adam on mean logloss with a per-epoch StepLR schedule. Keeps the
// parameters of the epoch with the lowest eval logloss and, when early
// stopping is on, stops after `patience` epochs without improvement.
// TrainingError on a non-finite loss, naming the batch and the parameters.
FitResult fit(const EncodedSet& train, const EncodedSet& test, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

// Predictions over `eval_batch`-sized batches, merged in input order; metrics
// are computed over the full concatenated prediction vector.
EvalResult evaluate(const EncodedSet& test, const ModelParams& params, const ModelConfig& model,
                    std::size_t eval_batch, std::size_t threads = 1);

// Shuffle seed for a given epoch; shared by every model trained with `seed`.
std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::size_t epoch);

// Header "epoch,train_logloss,eval_auc,eval_logloss,lr,seconds". With
// `wall_time` off the seconds column is written as 0 so that repeated runs
// produce identical bytes.
void write_metrics_csv(std::ostream& out, std::span<const EpochReport> reports, bool wall_time);

struct SweepRow {
  std::string param;
  double value = 0.0;
  double best_auc = 0.0;
  double best_logloss = 0.0;
  std::size_t epochs_run = 0;
  double cumulative_seconds = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  // best_auc never drops from one row to the next (in value order given).
  bool auc_nondecreasing = false;
};

inline constexpr std::string_view kSweepParams[] = {"lr", "embed_dim", "num_heads"};

// Applies one sweep value to a config. ArgumentError for unknown names or
// values that produce an invalid model.
TrainConfig with_sweep_value(const TrainConfig& base, std::string_view param, double value);

SweepReport sweep(std::string_view param, std::span<const double> values, const TrainConfig& base,
                  const EncodedSet& train, const EncodedSet& test);

// Header "param,value,best_auc,best_logloss,epochs_run".
void write_sweep_csv(std::ostream& out, const SweepReport& report);

// Shortest round-trip decimal for a double.
std::string format_double(double v);

}  // namespace ctr

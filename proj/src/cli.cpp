#include "ctr/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "ctr/checkpoint.hpp"
#include "ctr/errors.hpp"
#include "ctr/gradcheck.hpp"
#include "ctr/metrics.hpp"

namespace fs = std::filesystem;

namespace ctr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ArgumentError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ArgumentError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ArgumentError("config: '" + key + "' is out of range: '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string join_sizes(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

const std::vector<std::string>& metadata_keys() {
  static const std::vector<std::string> keys{"tool_version", "data_checksum", "started_at", "finished_at"};
  return keys;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::size_t env_threads() {
  if (const char* s = std::getenv("CTR_FORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end != s && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 0;
}

// Settings -> model config details that are derived rather than configured.
void finalize(RunSettings& s) {
  auto& m = s.train.model;
  if (m.num_heads == 0 || m.embed_dim % m.num_heads != 0) {
    throw ArgumentError("embed_dim " + std::to_string(m.embed_dim) + " must be divisible by heads " +
                        std::to_string(m.num_heads));
  }
  m.head_dim = m.embed_dim / m.num_heads;
  m.apply_ablation(s.ablation);
  m.seed = s.train.seed;
  s.train.threads = env_threads();
}

struct PreparedData {
  Schema schema;
  SplitResult parts;
  FeatureVocab vocab;
  EncodedSet train;
  EncodedSet test;
  std::string checksum;
};

PreparedData prepare(RunSettings& s) {
  PreparedData d;
  std::vector<CriteoRecord> records;
  if (!s.data.empty()) {
    if (!fs::exists(s.data)) throw IngestionError("data file not found: " + s.data);
    d.schema = kCriteoSchema;
    records = read_tsv_file(s.data, d.schema).records;
    std::ifstream in(s.data, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    d.checksum = "fnv1a64:" + hex64(fnv1a64(buf.str()));
  } else if (!s.synthetic.empty()) {
    SyntheticData syn = make_synthetic(s.synthetic, s.train.seed);
    d.schema = syn.schema;
    records = std::move(syn.records);
    std::ostringstream buf;
    write_tsv(buf, records);
    d.checksum = "fnv1a64:" + hex64(fnv1a64(buf.str()));
  } else {
    throw ArgumentError("either --data <tsv> or --synthetic <name> is required");
  }
  if (s.train.sample > 0) records = stratified_sample(records, s.train.sample, s.train.seed);
  d.parts = split(records, s.train.split_ratio, s.train.seed);
  if (d.parts.train.records.empty() || d.parts.test.records.empty()) {
    throw ArgumentError("split produced an empty partition; need more records");
  }
  d.vocab = FeatureVocab::build(d.parts.train, d.schema.num_categorical, s.train.min_freq, s.train.bucket_cap);
  d.train = encode(d.parts.train.records, d.vocab);
  d.test = encode(d.parts.test.records, d.vocab);

  auto& m = s.train.model;
  m.num_categorical = d.schema.num_categorical;
  m.num_dense = d.schema.num_dense;
  m.vocab_sizes = d.vocab.bucket_counts();
  m.validate();
  return d;
}

template <typename F>
void write_file(const fs::path& path, F&& body, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IngestionError("cannot write " + path.string());
  body(out);
}

// Options shared by train and sweep.
struct RunFlags {
  std::optional<std::string> data, synthetic, config, ablation, cin_layers, dnn_layers;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> epochs, embed_dim, heads, sample, train_batch, eval_batch;
  bool early_stop = false;
  bool wall_time = false;
  std::string out_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "Criteo-format TSV file");
    cmd->add_option("--synthetic", synthetic, "synthetic generator: planted, planted-noise, separable");
    cmd->add_option("--config", config, "flat key = value config file (a run manifest works too)");
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--seed", seed, "seed for sampling, splitting, init and shuffling");
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--epochs", epochs, "number of epochs");
    cmd->add_option("--embed-dim", embed_dim, "embedding dimension");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_option("--cin-layers", cin_layers, "comma-separated CIN layer sizes");
    cmd->add_option("--dnn-layers", dnn_layers, "comma-separated DNN layer sizes");
    cmd->add_option("--ablation", ablation, "none, xdeepfm, deepfm or lr");
    cmd->add_option("--sample", sample, "stratified subsample size before splitting (0 = all)");
    cmd->add_option("--train-batch", train_batch, "training batch size");
    cmd->add_option("--eval-batch", eval_batch, "evaluation batch size");
    cmd->add_flag("--early-stop", early_stop, "stop after `patience` epochs without eval-logloss gain");
    cmd->add_flag("--wall-time", wall_time, "write real epoch seconds into metrics.csv");
  }

  RunSettings resolve() const {
    RunSettings s = default_settings();
    if (config) {
      std::ifstream in(*config);
      if (!in) throw ArgumentError("cannot read config file: " + *config);
      apply_config(s, in);
    }
    auto set = [&](const char* key, const auto& opt, auto render) {
      if (opt) apply_config_value(s, key, render(*opt));
    };
    auto str = [](const std::string& v) { return v; };
    auto num = [](auto v) {
      if constexpr (std::is_floating_point_v<decltype(v)>) return format_double(v);
      else return std::to_string(v);
    };
    set("data", data, str);
    set("synthetic", synthetic, str);
    if (data) s.synthetic.clear();
    if (synthetic) s.data.clear();
    set("seed", seed, num);
    set("lr", lr, num);
    set("epochs", epochs, num);
    set("embed_dim", embed_dim, num);
    set("heads", heads, num);
    set("cin_layers", cin_layers, str);
    set("dnn_layers", dnn_layers, str);
    set("ablation", ablation, str);
    set("sample", sample, num);
    set("train_batch", train_batch, num);
    set("eval_batch", eval_batch, num);
    if (early_stop) s.train.early_stopping = true;
    if (wall_time) s.wall_time = true;
    finalize(s);
    return s;
  }
};

int cmd_train(const RunFlags& flags, std::ostream& out) {
  RunSettings s = flags.resolve();
  ManifestInfo info;
  info.started_at = utc_now();
  PreparedData d = prepare(s);
  info.data_checksum = d.checksum;

  const fs::path dir(flags.out_dir);
  fs::create_directories(dir);
  out << "train: " << d.train.size() << " examples, test: " << d.test.size() << " examples, "
      << s.train.model.num_fields() << " fields\n";

  const FitResult fr = fit(d.train, d.test, s.train, [&](const EpochReport& r) {
    out << "epoch " << r.epoch << " lr=" << format_double(r.lr) << " train_logloss=" << format_double(r.train_logloss)
        << " eval_auc=" << format_double(r.eval_auc) << " eval_logloss=" << format_double(r.eval_logloss) << '\n';
  });

  write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, fr.reports, s.wall_time); });
  save_checkpoint((dir / "best.ckpt").string(), s.train.model, fr.best);
  save_checkpoint((dir / "final.ckpt").string(), s.train.model, fr.last);
  write_file(dir / "vocab.tsv", [&](std::ostream& o) { d.vocab.save(o); });
  write_file(dir / "test.tsv", [&](std::ostream& o) { write_tsv(o, d.parts.test.records); });
  info.finished_at = utc_now();
  write_file(dir / "manifest.txt", [&](std::ostream& o) { o << render_manifest(s, info); });

  if (fr.best_epoch) {
    const auto& b = fr.reports[*fr.best_epoch];
    out << "best epoch " << b.epoch << ": auc=" << format_double(b.eval_auc)
        << " logloss=" << format_double(b.eval_logloss) << '\n';
  } else {
    const EvalResult ev = evaluate(d.test, fr.best, s.train.model, s.train.eval_batch, s.train.threads);
    out << "no epochs run: auc=" << format_double(ev.auc) << " logloss=" << format_double(ev.logloss) << '\n';
  }
  return kExitOk;
}

int cmd_sweep(const RunFlags& flags, const std::string& param, const std::string& values_text,
              std::ostream& out) {
  RunSettings s = flags.resolve();
  const auto values = parse_double_list(values_text);
  if (values.empty()) throw ArgumentError("--values must list at least one value");
  // Reject unknown names before loading data; values are checked once the
  // vocabulary sizes are known.
  if (std::find(std::begin(kSweepParams), std::end(kSweepParams), param) == std::end(kSweepParams)) {
    throw ArgumentError("unknown sweep parameter '" + param + "' (expected lr, embed_dim or num_heads)");
  }
  PreparedData d = prepare(s);
  for (double v : values) with_sweep_value(s.train, param, v);
  const SweepReport rep = sweep(param, values, s.train, d.train, d.test);

  const fs::path dir(flags.out_dir);
  fs::create_directories(dir);
  write_file(dir / "sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, rep); });
  write_sweep_csv(out, rep);
  out << "auc_nondecreasing=" << (rep.auc_nondecreasing ? "true" : "false") << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& vocab_path, const std::string& data,
             std::size_t eval_batch, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  std::ifstream vin(vocab_path);
  if (!vin) throw IngestionError("cannot open vocab file: " + vocab_path);
  const FeatureVocab vocab = FeatureVocab::load(vin, ck.config.num_categorical);
  if (!fs::exists(data)) throw IngestionError("data file not found: " + data);
  const Schema schema{ck.config.num_dense, ck.config.num_categorical};
  const ParseResult parsed = read_tsv_file(data, schema);
  if (parsed.records.empty()) throw IngestionError("no records in " + data);
  const EncodedSet enc = encode(parsed.records, vocab);
  const EvalResult ev = evaluate(enc, ck.params, ck.config, eval_batch, env_threads());
  out << "auc=" << format_double(ev.auc) << " logloss=" << format_double(ev.logloss) << '\n';
  return kExitOk;
}

int cmd_gradcheck(double tol, bool corrupt, std::uint64_t seed, std::ostream& out) {
  const ModelConfig cfg = tiny_config(seed);
  ModelParams params = gradcheck_params(cfg);
  const Batch batch = tiny_batch(cfg, 4, seed);
  GradCheckOptions opts;
  opts.tol = tol;
  opts.corrupt = corrupt;
  const GradCheckReport rep = grad_check(cfg, params, batch, opts);
  for (const auto& p : rep.params) {
    out << p.name << " entries=" << p.entries << " max_rel_error=" << format_double(p.max_rel_error) << '\n';
  }
  out << "max_rel_error=" << format_double(rep.max_rel_error) << " tol=" << format_double(tol) << ' '
      << (rep.passed ? "PASS" : "FAIL") << '\n';
  return rep.passed ? kExitOk : kExitCheckFailed;
}

}  // namespace

RunSettings default_settings() {
  RunSettings s;
  s.train.model.cin_layers = {128, 128};
  s.train.model.dnn_layers = {256, 128};
  return s;
}

void apply_config_value(RunSettings& s, const std::string& key, const std::string& value) {
  auto& t = s.train;
  auto& m = t.model;
  if (key == "data") {
    s.data = value;
  } else if (key == "synthetic") {
    s.synthetic = value;
  } else if (key == "seed") {
    t.seed = to_u64(key, value);
  } else if (key == "lr") {
    t.lr = to_double(key, value);
    if (!(t.lr > 0.0)) throw ArgumentError("config: lr must be positive");
  } else if (key == "epochs") {
    t.epochs = to_u64(key, value);
  } else if (key == "train_batch") {
    t.train_batch = to_u64(key, value);
  } else if (key == "eval_batch") {
    t.eval_batch = to_u64(key, value);
  } else if (key == "split_ratio") {
    t.split_ratio = to_double(key, value);
  } else if (key == "step_size") {
    t.step_size = to_u64(key, value);
  } else if (key == "gamma") {
    t.gamma = to_double(key, value);
  } else if (key == "early_stopping") {
    t.early_stopping = to_bool(key, value);
  } else if (key == "patience") {
    t.patience = to_u64(key, value);
  } else if (key == "min_freq") {
    t.min_freq = to_u64(key, value);
  } else if (key == "bucket_cap") {
    t.bucket_cap = to_u64(key, value);
  } else if (key == "sample") {
    t.sample = to_u64(key, value);
  } else if (key == "adam_beta1") {
    t.adam.beta1 = to_double(key, value);
  } else if (key == "adam_beta2") {
    t.adam.beta2 = to_double(key, value);
  } else if (key == "adam_eps") {
    t.adam.eps = to_double(key, value);
  } else if (key == "embed_dim") {
    m.embed_dim = to_u64(key, value);
  } else if (key == "heads") {
    m.num_heads = to_u64(key, value);
  } else if (key == "cin_layers") {
    m.cin_layers = parse_size_list(value);
  } else if (key == "dnn_layers") {
    m.dnn_layers = parse_size_list(value);
  } else if (key == "ablation") {
    s.ablation = parse_ablation(value);
  } else if (key == "wall_time") {
    s.wall_time = to_bool(key, value);
  } else if (std::find(metadata_keys().begin(), metadata_keys().end(), key) == metadata_keys().end()) {
    throw ArgumentError("config: unknown key '" + key + "'");
  }
  if (t.train_batch == 0 || t.eval_batch == 0 || t.step_size == 0 || t.min_freq == 0 || t.bucket_cap == 0) {
    throw ArgumentError("config: '" + key + "' must be positive");
  }
}

void apply_config(RunSettings& s, std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    apply_config_value(s, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string render_config(const RunSettings& s) {
  const auto& t = s.train;
  const auto& m = t.model;
  std::ostringstream o;
  if (!s.data.empty()) o << "data = " << s.data << '\n';
  if (!s.synthetic.empty()) o << "synthetic = " << s.synthetic << '\n';
  o << "seed = " << t.seed << '\n'
    << "lr = " << format_double(t.lr) << '\n'
    << "epochs = " << t.epochs << '\n'
    << "train_batch = " << t.train_batch << '\n'
    << "eval_batch = " << t.eval_batch << '\n'
    << "split_ratio = " << format_double(t.split_ratio) << '\n'
    << "step_size = " << t.step_size << '\n'
    << "gamma = " << format_double(t.gamma) << '\n'
    << "early_stopping = " << (t.early_stopping ? "true" : "false") << '\n'
    << "patience = " << t.patience << '\n'
    << "min_freq = " << t.min_freq << '\n'
    << "bucket_cap = " << t.bucket_cap << '\n'
    << "sample = " << t.sample << '\n'
    << "adam_beta1 = " << format_double(t.adam.beta1) << '\n'
    << "adam_beta2 = " << format_double(t.adam.beta2) << '\n'
    << "adam_eps = " << format_double(t.adam.eps) << '\n'
    << "embed_dim = " << m.embed_dim << '\n'
    << "heads = " << m.num_heads << '\n'
    << "cin_layers = " << join_sizes(m.cin_layers) << '\n'
    << "dnn_layers = " << join_sizes(m.dnn_layers) << '\n'
    << "ablation = " << ablation_name(s.ablation) << '\n'
    << "wall_time = " << (s.wall_time ? "true" : "false") << '\n';
  return o.str();
}

std::string render_manifest(const RunSettings& s, const ManifestInfo& info) {
  std::ostringstream o;
  o << "# ctr_forge run manifest; replay with: ctr_forge train --config <this file> --out <dir>\n"
    << "tool_version = " << kToolVersion << '\n'
    << "data_checksum = " << info.data_checksum << '\n'
    << "started_at = " << info.started_at << '\n'
    << "finished_at = " << info.finished_at << '\n'
    << render_config(s);
  return o.str();
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double("values", trim(item)));
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = to_u64("layer list", trim(item));
    if (v == 0) throw ArgumentError("layer sizes must be positive");
    out.push_back(v);
  }
  if (out.empty()) throw ArgumentError("layer list is empty");
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ctr_forge: CTR model with FM, CIN and multi-head attention branches"};
  app.require_subcommand(1);

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "split, build vocab, train, evaluate and write a run directory");
  train_flags.attach(train);

  RunFlags sweep_flags;
  std::string sweep_param, sweep_values;
  auto* sweep_cmd = app.add_subcommand("sweep", "train one model per value of a hyperparameter");
  sweep_flags.attach(sweep_cmd);
  sweep_cmd->add_option("--param", sweep_param, "lr, embed_dim or num_heads")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();

  std::string run_dir, ck_path, vocab_path, eval_data;
  std::size_t eval_batch = 4096;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a TSV file");
  eval->add_option("--run", run_dir, "run directory (defaults for the three paths below)");
  eval->add_option("--checkpoint", ck_path, "checkpoint file");
  eval->add_option("--vocab", vocab_path, "vocabulary file");
  eval->add_option("--data", eval_data, "TSV to evaluate");
  eval->add_option("--eval-batch", eval_batch, "evaluation batch size");

  double tol = 1e-4;
  bool corrupt = false;
  std::uint64_t gc_seed = 11;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient on a tiny model");
  gc->add_option("--tol", tol, "max relative error");
  gc->add_option("--seed", gc_seed, "seed for the tiny model and batch");
  gc->add_flag("--corrupt", corrupt, "negate one analytic gradient (harness self-test)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, out);
    if (*sweep_cmd) {
      // Accept the spelled-out names used on the command line too.
      std::string p = sweep_param;
      if (p == "embed-dim") p = "embed_dim";
      if (p == "heads") p = "num_heads";
      return cmd_sweep(sweep_flags, p, sweep_values, out);
    }
    if (*eval) {
      if (!run_dir.empty()) {
        const fs::path d(run_dir);
        if (ck_path.empty()) ck_path = (d / "best.ckpt").string();
        if (vocab_path.empty()) vocab_path = (d / "vocab.tsv").string();
        if (eval_data.empty()) eval_data = (d / "test.tsv").string();
      }
      if (ck_path.empty() || vocab_path.empty() || eval_data.empty()) {
        throw ArgumentError("eval needs --checkpoint, --vocab and --data (or --run <dir>)");
      }
      return cmd_eval(ck_path, vocab_path, eval_data, eval_batch, out);
    }
    if (*gc) return cmd_gradcheck(tol, corrupt, gc_seed, out);
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const MetricError& e) {
    err << "metric error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const Error& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ctr

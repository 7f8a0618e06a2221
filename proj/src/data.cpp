#include "ctr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "ctr/errors.hpp"

namespace ctr {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

bool parse_int(std::string_view s, std::int64_t& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::optional<CriteoRecord> parse_line(std::string_view line, const Schema& schema) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto cols = split_tabs(line);
  if (cols.size() != schema.num_columns()) return std::nullopt;

  CriteoRecord r;
  if (cols[0] == "1") {
    r.label = 1;
  } else if (cols[0] == "0") {
    r.label = 0;
  } else {
    return std::nullopt;
  }
  r.dense.resize(schema.num_dense);
  for (std::size_t i = 0; i < schema.num_dense; ++i) {
    const auto c = cols[1 + i];
    if (c.empty()) continue;
    std::int64_t v = 0;
    if (!parse_int(c, v)) return std::nullopt;
    r.dense[i] = v;
  }
  r.categorical.resize(schema.num_categorical);
  for (std::size_t i = 0; i < schema.num_categorical; ++i) {
    const auto c = cols[1 + schema.num_dense + i];
    if (!c.empty()) r.categorical[i] = std::string(c);
  }
  return r;
}

std::string serialize_line(const CriteoRecord& r) {
  std::string out = r.label ? "1" : "0";
  for (const auto& d : r.dense) {
    out += '\t';
    if (d) out += std::to_string(*d);
  }
  for (const auto& c : r.categorical) {
    out += '\t';
    if (c) out += *c;
  }
  return out;
}

ParseResult parse_tsv(std::istream& in, const Schema& schema, double max_skip_fraction) {
  ParseResult res;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++res.lines;
    if (auto rec = parse_line(line, schema)) {
      res.records.push_back(std::move(*rec));
    } else {
      ++res.skipped;
    }
  }
  if (res.lines > 0 &&
      static_cast<double>(res.skipped) > max_skip_fraction * static_cast<double>(res.lines)) {
    throw IngestionError("skipped " + std::to_string(res.skipped) + " of " +
                         std::to_string(res.lines) + " lines (malformed)");
  }
  return res;
}

ParseResult read_tsv_file(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open data file: " + path);
  return parse_tsv(in, schema);
}

void write_tsv(std::ostream& out, std::span<const CriteoRecord> records) {
  for (const auto& r : records) out << serialize_line(r) << '\n';
}

double transform_dense(std::optional<std::int64_t> raw) {
  if (!raw || *raw < 0) return 0.0;
  return std::log1p(static_cast<double>(*raw));
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// --- vocabulary -------------------------------------------------------------

FeatureVocab FeatureVocab::build(const TrainPartition& train, std::size_t num_fields,
                                 std::size_t min_freq, std::size_t bucket_cap) {
  if (min_freq == 0 || bucket_cap == 0) {
    throw ArgumentError("build_vocab: min_freq and bucket_cap must be positive");
  }
  FeatureVocab vocab(num_fields);
  for (std::size_t f = 0; f < num_fields; ++f) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& r : train.records) {
      if (f < r.categorical.size() && r.categorical[f]) ++counts[*r.categorical[f]];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : counts)
      if (n >= min_freq) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });

    Field& field = vocab.fields_[f];
    field.bucket_count = std::min(kept.size(), bucket_cap);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const auto idx = i < bucket_cap ? i + 1 : fnv1a64(kept[i].first) % bucket_cap + 1;
      field.index.emplace(kept[i].first, static_cast<std::uint32_t>(idx));
    }
  }
  return vocab;
}

std::uint32_t FeatureVocab::lookup(std::size_t field, std::string_view token) const {
  const auto& idx = fields_.at(field).index;
  auto it = idx.find(std::string(token));
  return it == idx.end() ? 0 : it->second;
}

std::uint32_t FeatureVocab::lookup(std::size_t field, const std::optional<std::string>& token) const {
  return token ? lookup(field, std::string_view(*token)) : 0;
}

std::vector<std::size_t> FeatureVocab::bucket_counts() const {
  std::vector<std::size_t> out;
  for (const auto& f : fields_) out.push_back(f.bucket_count);
  return out;
}

void FeatureVocab::save(std::ostream& out) const {
  out << "CTRVOCAB v1\n";
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    // Sorted by index so files are byte-stable.
    std::vector<std::pair<std::uint32_t, std::string>> rows;
    for (const auto& [tok, idx] : fields_[f].index) rows.emplace_back(idx, tok);
    std::sort(rows.begin(), rows.end());
    for (const auto& [idx, tok] : rows) out << f << '\t' << tok << '\t' << idx << '\n';
  }
}

FeatureVocab FeatureVocab::load(std::istream& in, std::size_t num_fields) {
  std::string line;
  if (!std::getline(in, line) || line != "CTRVOCAB v1") {
    throw IngestionError("vocab file: missing 'CTRVOCAB v1' header");
  }
  FeatureVocab vocab(num_fields);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    std::int64_t field = 0;
    std::int64_t idx = 0;
    if (cols.size() != 3 || !parse_int(cols[0], field) || !parse_int(cols[2], idx) || field < 0 ||
        static_cast<std::size_t>(field) >= num_fields || idx < 1) {
      throw IngestionError("vocab file: malformed line " + std::to_string(lineno));
    }
    Field& fl = vocab.fields_[static_cast<std::size_t>(field)];
    fl.index.emplace(std::string(cols[1]), static_cast<std::uint32_t>(idx));
    fl.bucket_count = std::max(fl.bucket_count, static_cast<std::size_t>(idx));
  }
  return vocab;
}

// --- sampling ---------------------------------------------------------------

namespace {

struct ByLabel {
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
};

ByLabel shuffled_by_label(std::span<const CriteoRecord> records, std::uint64_t seed) {
  ByLabel g;
  for (std::size_t i = 0; i < records.size(); ++i) (records[i].label ? g.pos : g.neg).push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(g.pos.begin(), g.pos.end(), rng);
  std::shuffle(g.neg.begin(), g.neg.end(), rng);
  return g;
}

// Number of positives to take so that the positive share of `take` matches
// the share in the population as closely as possible.
std::size_t positive_quota(std::size_t take, std::size_t n_pos, std::size_t total) {
  if (total == 0) return 0;
  const double exact = static_cast<double>(take) * static_cast<double>(n_pos) /
                       static_cast<double>(total);
  std::size_t q = static_cast<std::size_t>(std::llround(exact));
  const std::size_t n_neg = total - n_pos;
  q = std::min(q, n_pos);
  if (take - q > n_neg) q = take - n_neg;
  return q;
}

}  // namespace

std::vector<CriteoRecord> stratified_sample(std::span<const CriteoRecord> records, std::size_t n,
                                            std::uint64_t seed) {
  if (n > records.size()) {
    throw ArgumentError("stratified_sample: requested " + std::to_string(n) + " of " +
                        std::to_string(records.size()) + " records");
  }
  const ByLabel g = shuffled_by_label(records, seed);
  const std::size_t n_pos = positive_quota(n, g.pos.size(), records.size());
  std::vector<std::size_t> chosen(g.pos.begin(), g.pos.begin() + static_cast<std::ptrdiff_t>(n_pos));
  chosen.insert(chosen.end(), g.neg.begin(), g.neg.begin() + static_cast<std::ptrdiff_t>(n - n_pos));
  // Keep the original relative order of the selected records.
  std::sort(chosen.begin(), chosen.end());
  std::vector<CriteoRecord> out;
  out.reserve(n);
  for (auto i : chosen) out.push_back(records[i]);
  return out;
}

SplitResult split(std::span<const CriteoRecord> records, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("split: ratio must lie in [0, 1]");
  const ByLabel g = shuffled_by_label(records, seed);
  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(records.size())));
  const std::size_t train_pos = positive_quota(n_train, g.pos.size(), records.size());
  const std::size_t train_neg = n_train - train_pos;

  std::vector<bool> in_train(records.size(), false);
  for (std::size_t i = 0; i < train_pos; ++i) in_train[g.pos[i]] = true;
  for (std::size_t i = 0; i < train_neg; ++i) in_train[g.neg[i]] = true;

  SplitResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (in_train[i] ? out.train.records : out.test.records).push_back(records[i]);
  }
  return out;
}

// --- batching ---------------------------------------------------------------

EncodedSet encode(std::span<const CriteoRecord> records, const FeatureVocab& vocab) {
  EncodedSet e;
  e.num_categorical = vocab.num_fields();
  e.num_dense = records.empty() ? 0 : records.front().dense.size();
  e.cat_idx.reserve(records.size() * e.num_categorical);
  e.dense_val.reserve(records.size() * e.num_dense);
  e.labels.reserve(records.size());
  for (const auto& r : records) {
    if (r.categorical.size() != e.num_categorical || r.dense.size() != e.num_dense) {
      throw ArgumentError("encode: record width does not match the vocabulary/schema");
    }
    for (std::size_t f = 0; f < e.num_categorical; ++f) e.cat_idx.push_back(vocab.lookup(f, r.categorical[f]));
    for (const auto& d : r.dense) e.dense_val.push_back(transform_dense(d));
    e.labels.push_back(static_cast<double>(r.label));
  }
  return e;
}

BatchIterator::BatchIterator(const EncodedSet& data, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed)
    : data_(&data), batch_size_(batch_size), order_(data.size()) {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::size_t BatchIterator::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  const auto& d = *data_;
  out.size = n;
  out.num_categorical = d.num_categorical;
  out.num_dense = d.num_dense;
  out.cat_idx.resize(n * d.num_categorical);
  out.dense_val.resize(n * d.num_dense);
  out.labels.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t src = order_[cursor_ + b];
    std::copy_n(d.cat_idx.begin() + static_cast<std::ptrdiff_t>(src * d.num_categorical),
                d.num_categorical, out.cat_idx.begin() + static_cast<std::ptrdiff_t>(b * d.num_categorical));
    std::copy_n(d.dense_val.begin() + static_cast<std::ptrdiff_t>(src * d.num_dense), d.num_dense,
                out.dense_val.begin() + static_cast<std::ptrdiff_t>(b * d.num_dense));
    out.labels[b] = d.labels[src];
  }
  cursor_ += n;
  return true;
}

std::vector<Batch> batches(std::span<const CriteoRecord> records, const FeatureVocab& vocab,
                           std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed) {
  const EncodedSet enc = encode(records, vocab);
  BatchIterator it(enc, batch_size, shuffle_seed);
  std::vector<Batch> out;
  Batch b;
  while (it.next(b)) out.push_back(b);
  return out;
}

// --- synthetic generators ---------------------------------------------------

namespace {

std::string token_name(std::size_t field, std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08llx",
                static_cast<unsigned long long>(fnv1a64(std::to_string(field) + ":" + std::to_string(id)) &
                                                0xffffffffULL));
  return buf;
}

}  // namespace

SyntheticData make_planted(const PlantedOptions& opts) {
  if (opts.hidden_tokens < 2) throw ArgumentError("planted generator needs >= 2 hidden tokens");
  SyntheticData out;
  out.schema = Schema{opts.noise_dense, 2 + opts.noise_categorical};
  // Hidden fields sit at the first and last categorical slot.
  out.hidden_fields = {0, out.schema.num_categorical - 1};
  out.signal = opts.signal;
  out.offset = opts.offset;

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> hidden(0, opts.hidden_tokens - 1);
  std::uniform_int_distribution<std::size_t> other(0, opts.hidden_tokens - 2);
  std::uniform_int_distribution<std::size_t> noise(0, opts.noise_tokens - 1);
  std::uniform_int_distribution<std::int64_t> dense(0, 200);
  std::bernoulli_distribution agree(opts.agree_prob);
  std::bernoulli_distribution missing(0.1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  out.records.reserve(opts.count);
  for (std::size_t n = 0; n < opts.count; ++n) {
    CriteoRecord r;
    r.categorical.resize(out.schema.num_categorical);
    const std::size_t a = hidden(rng);
    const bool same = agree(rng);
    std::size_t b = a;
    if (!same) {
      // Uniform over the other tokens keeps the marginal of b uniform.
      b = other(rng);
      if (b >= a) ++b;
    }
    r.categorical[out.hidden_fields[0]] = token_name(out.hidden_fields[0], a);
    r.categorical[out.hidden_fields[1]] = token_name(out.hidden_fields[0], b);
    for (std::size_t f = 1; f + 1 < out.schema.num_categorical; ++f) {
      r.categorical[f] = token_name(f, noise(rng));
    }
    r.dense.resize(out.schema.num_dense);
    for (auto& d : r.dense) {
      if (!missing(rng)) d = dense(rng);
    }
    const double logit = opts.signal * (same ? 1.0 : 0.0) + opts.offset;
    const double p = 1.0 / (1.0 + std::exp(-logit));
    r.label = unit(rng) < p ? 1 : 0;
    out.records.push_back(std::move(r));
  }
  return out;
}

SyntheticData make_separable(std::size_t count, std::uint64_t seed) {
  SyntheticData out;
  out.schema = Schema{0, 2};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> tok(0, 9);
  for (std::size_t n = 0; n < count; ++n) {
    CriteoRecord r;
    const std::size_t a = tok(rng);
    r.categorical = {token_name(0, a), token_name(1, tok(rng))};
    r.label = a < 5 ? 1 : 0;
    out.records.push_back(std::move(r));
  }
  return out;
}

SyntheticData make_synthetic(std::string_view name, std::uint64_t seed) {
  if (name == "planted") {
    PlantedOptions o;
    o.seed = seed;
    return make_planted(o);
  }
  if (name == "planted-noise") {
    PlantedOptions o;
    o.seed = seed;
    o.noise_categorical = 6;
    o.noise_dense = 3;
    return make_planted(o);
  }
  if (name == "separable") return make_separable(4000, seed);
  throw ArgumentError("unknown synthetic generator '" + std::string(name) +
                      "' (expected planted, planted-noise or separable)");
}

}  // namespace ctr

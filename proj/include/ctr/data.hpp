#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctr {

// Column layout of a TSV file: label, dense columns, categorical columns.
struct Schema {
  std::size_t num_dense = 13;
  std::size_t num_categorical = 26;

  std::size_t num_columns() const { return 1 + num_dense + num_categorical; }
  bool operator==(const Schema&) const = default;
};

inline constexpr Schema kCriteoSchema{13, 26};

struct CriteoRecord {
  int label = 0;
  std::vector<std::optional<std::int64_t>> dense;
  std::vector<std::optional<std::string>> categorical;

  bool operator==(const CriteoRecord&) const = default;
};

struct ParseResult {
  std::vector<CriteoRecord> records;
  std::size_t lines = 0;
  std::size_t skipped = 0;
};

// Returns nullopt for a malformed line (wrong column count, bad label or a
// non-integer dense value).
std::optional<CriteoRecord> parse_line(std::string_view line, const Schema& schema = kCriteoSchema);
std::string serialize_line(const CriteoRecord& r);

// Malformed lines are skipped and counted; IngestionError when more than
// `max_skip_fraction` of the lines were skipped.
ParseResult parse_tsv(std::istream& in, const Schema& schema = kCriteoSchema,
                      double max_skip_fraction = 0.01);
ParseResult read_tsv_file(const std::string& path, const Schema& schema = kCriteoSchema);
void write_tsv(std::ostream& out, std::span<const CriteoRecord> records);

// missing or negative -> 0, otherwise log(1 + raw).
double transform_dense(std::optional<std::int64_t> raw);

// 64-bit FNV-1a; used for vocabulary overflow hashing and data checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Training partition. Vocabularies can only be built from this type, so test
// records never reach vocabulary construction.
struct TrainPartition {
  std::vector<CriteoRecord> records;
};
struct TestPartition {
  std::vector<CriteoRecord> records;
};
struct SplitResult {
  TrainPartition train;
  TestPartition test;
};

// Per categorical field: token -> index in [1, bucket_count]; 0 is OOV.
class FeatureVocab {
 public:
  FeatureVocab() = default;
  explicit FeatureVocab(std::size_t num_fields) : fields_(num_fields) {}

  // Tokens seen at least `min_freq` times get indices 1..K by descending
  // frequency (ties lexicographic). Beyond `bucket_cap`, the remaining tokens
  // share buckets via fnv1a64(token) % bucket_cap + 1.
  static FeatureVocab build(const TrainPartition& train, std::size_t num_fields,
                            std::size_t min_freq = 10, std::size_t bucket_cap = 1'000'000);

  std::uint32_t lookup(std::size_t field, std::string_view token) const;
  std::uint32_t lookup(std::size_t field, const std::optional<std::string>& token) const;
  std::uint32_t lookup(std::size_t field, const std::string& token) const {
    return lookup(field, std::string_view(token));
  }
  std::uint32_t lookup(std::size_t field, const char* token) const {
    return lookup(field, std::string_view(token));
  }
  std::size_t bucket_count(std::size_t field) const { return fields_.at(field).bucket_count; }
  std::size_t num_fields() const { return fields_.size(); }
  std::vector<std::size_t> bucket_counts() const;
  std::size_t num_tokens(std::size_t field) const { return fields_.at(field).index.size(); }

  // Text format: header "CTRVOCAB v1", then "field\ttoken\tindex" lines.
  void save(std::ostream& out) const;
  static FeatureVocab load(std::istream& in, std::size_t num_fields);

  bool operator==(const FeatureVocab&) const = default;

 private:
  struct Field {
    std::unordered_map<std::string, std::uint32_t> index;
    std::size_t bucket_count = 0;
    bool operator==(const Field&) const = default;
  };
  std::vector<Field> fields_;
};

// Label-stratified subsample of exactly n records. ArgumentError if n exceeds
// the population.
std::vector<CriteoRecord> stratified_sample(std::span<const CriteoRecord> records, std::size_t n,
                                            std::uint64_t seed);

// Label-stratified split; round(ratio * size) records go to train.
SplitResult split(std::span<const CriteoRecord> records, double ratio, std::uint64_t seed);

// Records after dense transform and vocabulary lookup, stored column-packed
// per example.
struct EncodedSet {
  std::size_t num_categorical = 0;
  std::size_t num_dense = 0;
  std::vector<std::uint32_t> cat_idx;
  std::vector<double> dense_val;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }
};

EncodedSet encode(std::span<const CriteoRecord> records, const FeatureVocab& vocab);

struct Batch {
  std::size_t size = 0;
  std::size_t num_categorical = 0;
  std::size_t num_dense = 0;
  std::vector<std::uint32_t> cat_idx;  // size x num_categorical
  std::vector<double> dense_val;       // size x num_dense
  std::vector<double> labels;          // size

  std::uint32_t cat(std::size_t b, std::size_t f) const { return cat_idx[b * num_categorical + f]; }
  double dense(std::size_t b, std::size_t f) const { return dense_val[b * num_dense + f]; }
};

// Sequential mini-batches over an encoded set. With a seed the order is a
// seeded permutation, otherwise input order. The last batch may be partial.
class BatchIterator {
 public:
  BatchIterator(const EncodedSet& data, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

  bool next(Batch& out);
  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const EncodedSet* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

std::vector<Batch> batches(std::span<const CriteoRecord> records, const FeatureVocab& vocab,
                           std::size_t batch_size,
                           std::optional<std::uint64_t> shuffle_seed = std::nullopt);

// Synthetic data with a planted second-order signal: label ~ Bernoulli of
// sigmoid(signal * [two hidden categorical fields agree] + offset). Marginals
// of every field are uniform, so no single field is informative.
struct PlantedOptions {
  std::size_t count = 12'500;
  std::size_t noise_categorical = 2;
  std::size_t noise_dense = 1;
  std::size_t hidden_tokens = 8;
  std::size_t noise_tokens = 40;
  double agree_prob = 0.5;
  double signal = 3.0;
  double offset = -1.5;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  Schema schema;
  std::vector<CriteoRecord> records;
  // Indices of the two categorical fields carrying the interaction; empty for
  // generators without one.
  std::vector<std::size_t> hidden_fields;
  double signal = 0.0;
  double offset = 0.0;
};

SyntheticData make_planted(const PlantedOptions& opts);
// Two categorical fields; the label is a deterministic function of field 0.
SyntheticData make_separable(std::size_t count, std::uint64_t seed);
// "planted", "planted-noise" or "separable"; ArgumentError otherwise.
SyntheticData make_synthetic(std::string_view name, std::uint64_t seed);

}  // namespace ctr

#include "ctr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "ctr/errors.hpp"

namespace ctr {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

bool get_u64(std::istream& in, std::uint64_t& v) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return true;
}

std::uint64_t need_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  if (!get_u64(in, v)) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

void put_list(std::ostream& out, const std::vector<std::size_t>& xs) {
  put_u64(out, xs.size());
  for (auto x : xs) put_u64(out, x);
}

std::vector<std::size_t> get_list(std::istream& in, const char* what) {
  const auto n = need_u64(in, what);
  if (n > (1u << 20)) throw CheckpointError(std::string("implausible list length for ") + what);
  std::vector<std::size_t> xs(n);
  for (auto& x : xs) x = need_u64(in, what);
  return xs;
}

}  // namespace

void save_checkpoint(std::ostream& out, const ModelConfig& cfg, const ModelParams& params) {
  out.write(kCheckpointMagic, 8);
  put_u64(out, cfg.num_categorical);
  put_u64(out, cfg.num_dense);
  put_list(out, cfg.vocab_sizes);
  put_u64(out, cfg.embed_dim);
  put_list(out, cfg.cin_layers);
  put_u64(out, cfg.num_heads);
  put_u64(out, cfg.head_dim);
  put_list(out, cfg.dnn_layers);
  put_u64(out, cfg.use_attention);
  put_u64(out, static_cast<std::uint64_t>(cfg.head));
  put_u64(out, cfg.cin_fusion);
  put_u64(out, cfg.dnn_fusion);
  put_u64(out, std::bit_cast<std::uint64_t>(cfg.ln_eps));
  put_u64(out, std::bit_cast<std::uint64_t>(cfg.init_std));
  put_u64(out, cfg.seed);

  for (const Parameter* p : params.all()) {
    put_u64(out, p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u64(out, p->value.rows());
    put_u64(out, p->value.cols());
    for (double v : p->value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
  save_checkpoint(out, cfg, params);
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint (expected magic CTRCKPT1)");
  }
  Checkpoint ck;
  ModelConfig& c = ck.config;
  c.num_categorical = need_u64(in, "num_categorical");
  c.num_dense = need_u64(in, "num_dense");
  c.vocab_sizes = get_list(in, "vocab_sizes");
  c.embed_dim = need_u64(in, "embed_dim");
  c.cin_layers = get_list(in, "cin_layers");
  c.num_heads = need_u64(in, "num_heads");
  c.head_dim = need_u64(in, "head_dim");
  c.dnn_layers = get_list(in, "dnn_layers");
  c.use_attention = need_u64(in, "use_attention") != 0;
  const auto head = need_u64(in, "head");
  if (head > 1) throw CheckpointError("unknown first-order head id " + std::to_string(head));
  c.head = static_cast<FirstOrderHead>(head);
  c.cin_fusion = need_u64(in, "cin_fusion") != 0;
  c.dnn_fusion = need_u64(in, "dnn_fusion") != 0;
  c.ln_eps = std::bit_cast<double>(need_u64(in, "ln_eps"));
  c.init_std = std::bit_cast<double>(need_u64(in, "init_std"));
  c.seed = need_u64(in, "seed");

  try {
    ck.params = init_params(c);
  } catch (const ArgumentError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : ck.params.all()) by_name[p->name] = p;

  std::uint64_t name_len = 0;
  while (get_u64(in, name_len)) {
    if (name_len > 4096) throw CheckpointError("implausible tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw CheckpointError("checkpoint truncated in tensor name");
    }
    const auto rows = need_u64(in, "tensor rows");
    const auto cols = need_u64(in, "tensor cols");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    Matrix& dst = it->second->value;
    if (dst.rows() != rows || dst.cols() != cols) {
      throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", config expects " + dst.shape_str());
    }
    for (double& v : dst.data()) v = std::bit_cast<double>(need_u64(in, "tensor data"));
    by_name.erase(it);
  }
  if (in.gcount() != 0) throw CheckpointError("checkpoint has trailing partial record");
  if (!by_name.empty()) {
    throw CheckpointError("checkpoint is missing tensor '" + by_name.begin()->first + "'");
  }
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace ctr

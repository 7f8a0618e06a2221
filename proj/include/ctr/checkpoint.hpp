#pragma once

#include <iosfwd>
#include <string>

#include "ctr/model.hpp"

namespace ctr {

// Binary layout, all integers little-endian:
//   "CTRCKPT1"
//   config block: every ModelConfig field as a 64-bit integer (lists are a
//                 count followed by the entries, doubles are bit-cast)
//   tensors until EOF: u64 name length, name bytes, u64 rows, u64 cols,
//                      rows*cols IEEE-754 doubles row-major
inline constexpr char kCheckpointMagic[] = "CTRCKPT1";

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

void save_checkpoint(std::ostream& out, const ModelConfig& cfg, const ModelParams& params);
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
// CheckpointError on bad magic, truncation, or tensors that do not match the
// stored config.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ctr

#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ctr/trainer.hpp"

namespace ctr {

inline constexpr char kToolVersion[] = "0.1.0";

// Exit-code contract of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2, kExitRuntime = 3 };

// Everything a run needs besides its output directory.
struct RunSettings {
  TrainConfig train;
  std::string data;       // Criteo-format TSV path
  std::string synthetic;  // generator name, used when `data` is empty
  Ablation ablation = Ablation::None;
  bool wall_time = false;  // real seconds in metrics.csv
};

// Defaults used by the CLI: the paper-scale training protocol with CIN
// (128, 128) and DNN (256, 128).
RunSettings default_settings();

// Applies flat "key = value" lines ('#' starts a comment). Manifest metadata
// keys are accepted and ignored. ArgumentError on unknown keys or bad values.
void apply_config(RunSettings& s, std::istream& in);
void apply_config_value(RunSettings& s, const std::string& key, const std::string& value);

// Resolved settings as config lines; feeding them back through apply_config
// reproduces `s` exactly.
std::string render_config(const RunSettings& s);

struct ManifestInfo {
  std::string data_checksum;
  std::string started_at;
  std::string finished_at;
};
std::string render_manifest(const RunSettings& s, const ManifestInfo& info);

std::vector<double> parse_double_list(const std::string& text);
std::vector<std::size_t> parse_size_list(const std::string& text);

// Entry point behind the ctr_forge binary. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctr

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "byov/config.hpp"

namespace byov {

struct CliOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // key.path=value
  std::string resume_path;
  std::optional<uint64_t> seed;
  bool force = false;
};

// Resolved run context: effective config, canonical text/hash, output dir.
struct RunContext {
  ExperimentConfig cfg;
  std::string run_dir;
  std::string config_text;  // canonical effective config, embedded everywhere
  std::string config_hash;
  std::string resume_path;
};

RunContext prepare_run(const std::string& subcommand, const CliOptions& opts);

// A trained model reloaded from a checkpoint file, together with the
// settings embedded at save time.
struct LoadedRun {
  TrainState state;
  ExperimentConfig cfg;
  std::string config_text;
  std::string checkpoint_hash;
};

LoadedRun load_run(const std::string& checkpoint_path);
void save_run(const TrainState& ts, const std::string& config_text, const std::string& path);

Dataset load_split(const DataConfig& data, Split split);

/// Dispatch by subcommand name; throws on failure.
void run_subcommand(const std::string& name, const RunContext& ctx);

std::vector<std::string> subcommand_names();

}  // namespace byov

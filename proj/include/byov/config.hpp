#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "byov/data.hpp"
#include "byov/evaluation.hpp"
#include "byov/pruning.hpp"
#include "byov/training.hpp"

namespace byov {

struct DataConfig {
  std::string format = "synthetic";  // synthetic | idx
  std::string images, labels, test_images, test_labels;
  SyntheticSpec synthetic{2048, 10, 28, 28, 7};
  size_t synthetic_n_test = 512;
  AugmentConfig augment;
};

struct EvalConfig {
  std::string checkpoint;
  std::string baseline_checkpoint;  // optional second model for the OOD grid
  std::string compare_checkpoint;   // supervised counterpart for std-compare
  bool mc_inference = false;        // calibration/OOD score MAP by default
  int mc_draws = 50;
  int ece_bins = 15;
  int std_compare_draws = 200;
  int mc_ablation_max_k = 50;
  int mc_ablation_bootstrap = 50;
  int mc_ablation_samples = 64;
  int latent_images = 64;
  int latent_draws = 30;
  ProbeMode probe_mode = ProbeMode::Map;
  ProbeConfig probe;
};

struct PruneConfig {
  std::vector<PruneCriterion> criteria = {PruneCriterion::Snr, PruneCriterion::Magnitude};
  std::vector<double> keep_percentiles = {1, 5, 10, 25, 50, 75, 100};
};

struct AblateConfig {
  std::vector<double> betas = {0.1, 0.3, 1.0};
  std::vector<PriorKind> priors = {PriorKind::StandardNormal, PriorKind::TeacherMean,
                                   PriorKind::TeacherMeanVar};
};

// One declarative document drives every subcommand. Unknown keys anywhere
// are rejected with their full path.
struct ExperimentConfig {
  std::string experiment = "run";
  uint64_t seed = 1;
  std::string output_dir;  // empty: $BYOV_OUT_DIR or ./runs
  DataConfig data;
  NetworkSpec net;
  double init_log_var = -10.0;
  OptConfig opt;
  size_t batch_size = 128;
  size_t epochs = 10;
  double tau = 0.996;
  PriorKind prior_kind = PriorKind::StandardNormal;
  double prior_gamma = 0.996;
  double prior_var_floor = 1e-8;
  double beta_start = 0.0;
  double beta_end = 1.0;
  EvalConfig eval;
  std::vector<AugmentationSpec> ood_ladder;
  PruneConfig prune;
  AblateConfig ablate;

  TrainSettings train_settings(ModelKind kind) const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_text(const std::string& text);

/// Dotted-path override: "train.lr=0.01". The value is parsed as JSON when
/// possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Canonical effective form (defaults filled in, keys sorted).
nlohmann::json to_json(const ExperimentConfig& cfg);
std::string canonical_text(const ExperimentConfig& cfg);
uint64_t config_hash(const std::string& canonical_text);
std::string hash_hex(uint64_t h);

}  // namespace byov

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "byov/checkpoint.hpp"
#include "byov/data.hpp"
#include "byov/model.hpp"
#include "byov/optimizer.hpp"
#include "byov/priors.hpp"

namespace byov {

// Single-cycle cosine from beta_start to beta_end over total_steps.
// Steps outside [0, total_steps] clamp to the endpoints.
struct BetaSchedule {
  double beta_start = 0.0;
  double beta_end = 1.0;
  long total_steps = 1;

  double at(long step) const;
};

struct TrainSettings {
  ModelKind kind = ModelKind::Byov;
  NetworkSpec net;
  OptConfig opt;
  size_t batch_size = 128;
  size_t epochs = 10;
  uint64_t seed = 1;
  double tau = 0.996;
  PriorKind prior_kind = PriorKind::StandardNormal;
  double prior_gamma = 0.996;
  double prior_var_floor = 1e-8;
  double beta_start = 0.0;
  double beta_end = 1.0;
  double init_log_var = -10.0;
  AugmentConfig augment;

  void validate() const;  // e.g. weight decay is rejected for Bayesian models
};

struct StepRecord {
  long step = 0;
  size_t epoch = 0;
  double loss_total = 0.0;
  double loss_distill = 0.0;  // cross-entropy NLL for the supervised model
  double kl = 0.0;
  double beta = 0.0;
  std::optional<double> train_acc;
};

struct EpochRecord {
  size_t epoch = 0;
  double mean_loss = 0.0;
  std::vector<std::pair<std::string, LayerStats>> layers;  // Bayesian layers only
};

struct TrainState {
  TrainSettings cfg;
  Model model;
  TeacherState teacher;
  PriorSpec prior;
  Optimizer opt;
  BetaSchedule schedule;
  long step = 0;

  static TrainState init(const TrainSettings& cfg, size_t n_train);
};

/// One optimizer step on a pair of augmented views (one posterior draw per
/// minibatch, symmetric loss, then teacher EMA and prior update, in that
/// order). Aborts with NanError naming the first non-finite tensor.
StepRecord train_step(TrainState& ts, const Tensor& x1, const Tensor& x2);

/// Supervised variant: cross-entropy NLL takes the distillation loss's place
/// in the objective; one augmented view per step.
StepRecord train_step_supervised(TrainState& ts, const Tensor& x, const std::vector<int>& labels);

// Deterministic minibatch: order and augmentations are keyed by
// (seed, epoch, image index) only. Final partial batches are dropped.
struct Batch {
  Tensor x1, x2;  // x2 is empty for the supervised model
  std::vector<int> labels;
  std::vector<size_t> indices;
};

Batch make_batch(const Dataset& data, const TrainSettings& cfg, size_t epoch, size_t batch_idx);

using StepHook = std::function<void(const StepRecord&)>;
using EpochHook = std::function<void(const EpochRecord&)>;

/// Full training loop over the dataset (any ModelKind). Batch order and
/// augmentations are pure functions of (seed, epoch), so runs replay exactly.
void train_run(TrainState& ts, const Dataset& train, const StepHook& on_step,
               const EpochHook& on_epoch);

EpochRecord make_epoch_record(const TrainState& ts, size_t epoch, double mean_loss);

// ---- persistence (named-tensor store; the caller owns the file I/O)

void save_train_state(const TrainState& ts, TensorStore& store);
/// Rebuilds model/teacher/prior/optimizer from a store produced by
/// save_train_state; cfg must describe the same architecture.
TrainState restore_train_state(const TrainSettings& cfg, const TensorStore& store);

}  // namespace byov

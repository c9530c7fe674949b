#pragma once

#include <span>
#include <string>
#include <vector>

#include "byov/evaluation.hpp"
#include "byov/model.hpp"

namespace byov {

enum class PruneCriterion { Snr, Magnitude };

PruneCriterion parse_criterion(const std::string& s);
const char* criterion_name(PruneCriterion c);

// Per-layer keep masks over the prunable weight matrices (dense and patch
// weights; biases and layer-norm parameters are left alone).
struct PruneMask {
  std::vector<std::pair<std::string, Tensor>> layers;  // layer_id -> 0/1 mask
  double keep_percentile = 100.0;
  PruneCriterion criterion = PruneCriterion::Magnitude;
};

bool is_prunable(const VariationalParam& p);

/// Keeps round(n * keep/100) coordinates per layer, those with the highest
/// criterion value (SNR: |mu|/sigma, Magnitude: |mu|). Ties keep the earlier
/// flat index. SNR on a point-estimate layer is an error.
PruneMask build_mask(const Model& m, PruneCriterion criterion, double keep_percentile);

/// Zeroes mu on masked coordinates and silences their sampling: a pruned
/// weight contributes exactly 0 in every forward pass, MAP or sampled.
void apply_mask(Model& m, const PruneMask& mask);

double effective_sparsity(const Model& m);

struct SweepRow {
  std::string criterion;
  double keep_pct = 100.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double effective_sparsity = 0.0;
};

/// MAP probe accuracy on the frozen pruned encoder for each grid point; the
/// probe is fitted once on the unpruned encoder and reused (nothing is
/// retrained after pruning).
std::vector<SweepRow> sparsity_sweep(const Model& m, const Probe& probe, const Dataset& test,
                                     std::span<const PruneCriterion> criteria,
                                     std::span<const double> keep_percentiles);

}  // namespace byov

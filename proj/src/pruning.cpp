#include "byov/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "byov/priors.hpp"

namespace byov {

PruneCriterion parse_criterion(const std::string& s) {
  if (s == "snr") return PruneCriterion::Snr;
  if (s == "magnitude") return PruneCriterion::Magnitude;
  throw ConfigError("prune: unknown criterion '" + s + "'");
}

const char* criterion_name(PruneCriterion c) {
  return c == PruneCriterion::Snr ? "snr" : "magnitude";
}

bool is_prunable(const VariationalParam& p) {
  const std::string& id = p.layer_id;
  return id.size() > 2 && id.compare(id.size() - 2, 2, ".w") == 0 && id.find(".ln.") == std::string::npos;
}

PruneMask build_mask(const Model& m, PruneCriterion criterion, double keep_percentile) {
  if (keep_percentile <= 0.0 || keep_percentile > 100.0) {
    throw ConfigError("prune: keep_percentile must lie in (0, 100]");
  }
  PruneMask mask;
  mask.criterion = criterion;
  mask.keep_percentile = keep_percentile;
  for (const VariationalParam& p : m.params) {
    if (!is_prunable(p)) continue;
    if (criterion == PruneCriterion::Snr && !p.bayesian) {
      throw ValueError("prune: SNR criterion needs a Bayesian layer but '" + p.layer_id +
                       "' is a point estimate; use the magnitude criterion");
    }
    const size_t n = p.size();
    std::vector<double> score(n);
    for (size_t i = 0; i < n; ++i) {
      score[i] = criterion == PruneCriterion::Snr
                     ? std::fabs(p.mu[i]) / std::exp(0.5 * p.log_var[i])
                     : std::fabs(p.mu[i]);
    }
    const size_t keep =
        std::min(n, static_cast<size_t>(std::llround(n * keep_percentile / 100.0)));
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&score](size_t a, size_t b) {
      return score[a] > score[b] || (score[a] == score[b] && a < b);
    });
    Tensor keep_mask(p.mu.shape(), 0.0);
    for (size_t r = 0; r < keep; ++r) keep_mask[idx[r]] = 1.0;
    mask.layers.emplace_back(p.layer_id, std::move(keep_mask));
  }
  return mask;
}

void apply_mask(Model& m, const PruneMask& mask) {
  for (const auto& [id, keep] : mask.layers) {
    VariationalParam* p = m.find_param(id);
    if (!p) throw ValueError("prune: no layer '" + id + "' in this model");
    if (!p->mu.same_shape(keep)) {
      throw ShapeError("prune: mask shape " + keep.shape_string() + " does not match layer '" + id +
                       "' " + p->mu.shape_string());
    }
    for (size_t i = 0; i < keep.size(); ++i) {
      if (keep[i] == 0.0) p->mu[i] = 0.0;
    }
    p->prune_mask = keep;
  }
}

double effective_sparsity(const Model& m) {
  size_t total = 0, zeroed = 0;
  for (const VariationalParam& p : m.params) {
    if (!is_prunable(p)) continue;
    total += p.size();
    if (!p.prune_mask) continue;
    for (size_t i = 0; i < p.size(); ++i) zeroed += (*p.prune_mask)[i] == 0.0;
  }
  return total == 0 ? 0.0 : static_cast<double>(zeroed) / static_cast<double>(total);
}

std::vector<SweepRow> sparsity_sweep(const Model& m, const Probe& probe, const Dataset& test,
                                     std::span<const PruneCriterion> criteria,
                                     std::span<const double> keep_percentiles) {
  if (!test.labels) throw ValueError("prune: sweep needs a labeled test split");
  std::vector<SweepRow> rows;
  for (PruneCriterion crit : criteria) {
    for (double keep : keep_percentiles) {
      Model pruned = m;
      apply_mask(pruned, build_mask(pruned, crit, keep));
      Tensor probs = softmax(probe_logits(probe, encoder_forward(pruned, map_weights(pruned),
                                                                 test.images)));
      SweepRow row;
      row.criterion = criterion_name(crit);
      row.keep_pct = keep;
      row.top1 = accuracy_topk(probs, *test.labels, 1);
      row.top5 = accuracy_topk(probs, *test.labels, 5);
      row.effective_sparsity = effective_sparsity(pruned);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace byov

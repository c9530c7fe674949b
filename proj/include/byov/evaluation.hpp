#pragma once

#include <span>
#include <string>
#include <vector>

#include "byov/data.hpp"
#include "byov/model.hpp"

namespace byov {

enum class ProbeMode { Map, PosteriorMean };
ProbeMode parse_probe_mode(const std::string& s);

struct ProbeConfig {
  int max_iters = 400;
  double lr = 0.1;
  double grad_tol = 1e-4;
  double l2 = 1e-3;     // ridge penalty on the probe weights
  int mean_draws = 10;  // K for the posterior-mean representation
};

// Multinomial logistic regression on frozen encoder representations,
// with feature standardization folded into the probe.
struct Probe {
  Tensor w;  // [repr_dim, classes]
  Tensor b;  // [classes]
  Tensor feat_mean, feat_inv_std;
  size_t classes = 0;
  bool converged = true;
  double final_grad_norm = 0.0;
};

/// Frozen-encoder representations for a whole dataset: MAP uses mu weights,
/// PosteriorMean averages the representation over mean_draws posterior draws.
Tensor representations(const Model& m, const Tensor& images, ProbeMode mode, int mean_draws,
                       uint64_t seed);

/// Non-convergence (gradient norm above tol at max_iters) is a warning
/// carried on the Probe, not a failure.
Probe fit_linear_probe(const Model& m, const Dataset& train, ProbeMode mode,
                       const ProbeConfig& cfg, uint64_t seed);

Tensor probe_logits(const Probe& probe, const Tensor& h);

struct PredictiveSummary {
  Tensor probs_mean;  // [N, C], rows sum to 1
  Tensor probs_std;   // [N, C], population std across draws
  std::vector<double> per_draw_top1;
  int draws = 0;
};

/// K posterior draws through the frozen encoder and probe (or the supervised
/// head when the model carries one); softmax per draw, moments across draws.
PredictiveSummary mc_predict(const Model& m, const Probe* probe, const Dataset& data, int draws,
                             uint64_t seed);

/// Single deterministic pass with the posterior means (MAP inference);
/// probs_std is identically zero.
PredictiveSummary map_predict(const Model& m, const Probe* probe, const Dataset& data);

struct BinStat {
  double conf_lo = 0.0, conf_hi = 0.0;
  double mean_conf = 0.0, accuracy = 0.0;
  size_t count = 0;
};

// ECE bins confidence (max mean probability) against top-1 correctness.
// The Brier score is the mean over samples of the squared distance between
// probs_mean and the one-hot label. Its three-term decomposition uses the
// same confidence bins, vector-valued: reliability compares bin-mean
// forecasts with bin outcome frequencies, uncertainty is the label
// distribution's variance, and resolution is the generalized form (classic
// between-bin resolution minus within-bin forecast variance plus twice the
// within-bin forecast/outcome covariance), which makes
//   brier == reliability - resolution + uncertainty
// an algebraic identity rather than an approximation.
struct CalibrationReport {
  double ece = 0.0;
  double brier = 0.0;
  double reliability = 0.0;
  double resolution = 0.0;
  double uncertainty = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<BinStat> bins;
};

CalibrationReport calibration(const PredictiveSummary& summary, const std::vector<int>& labels,
                              int num_bins);

// Paired per-sample predictive stds (mean over classes of probs_std) for two
// models on the same samples, with Pearson correlation and the moments of a
// 2-D Gaussian fit. pearson is NaN when either side is degenerate (zero
// spread), e.g. two point-estimate models.
struct StdCompare {
  std::vector<double> std_a, std_b;
  double pearson = 0.0;
  double mean_a = 0.0, mean_b = 0.0, sd_a = 0.0, sd_b = 0.0, cov = 0.0;
};

StdCompare compare_predictive_std(const PredictiveSummary& a, const PredictiveSummary& b);

struct LatentVarianceRow {
  double noise = 0.0;
  std::string stage;  // encoder | projector | predictor
  size_t image = 0;
  double variance = 0.0;  // mean over dims of the across-draw variance
};

/// Posterior-draw variance of each stage's output, per image, per Gaussian
/// noise strength.
std::vector<LatentVarianceRow> latent_variance_profile(const Model& m, const Tensor& images,
                                                       std::span<const double> noise_ladder,
                                                       int m_draws, uint64_t seed);

struct McAblationRow {
  int k = 0;
  double std_running_mean = 0.0;   // across bootstrap replicates, averaged over cells
  double mean_running_mean = 0.0;  // averaged over cells
};

struct McAblation {
  std::vector<McAblationRow> rows;
  double loglog_slope = 0.0;  // least-squares slope of log std vs log k
};

McAblation mc_ablation(const Model& m, const Probe* probe, const Dataset& data, int max_k,
                       int bootstrap, uint64_t seed);

double accuracy_topk(const Tensor& probs, const std::vector<int>& labels, size_t k);

}  // namespace byov

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "byov/tape.hpp"
#include "byov/tensor.hpp"

namespace byov {

// Mean-field Gaussian posterior over one layer's weights: sigma^2 = exp(log_var),
// so positivity is structural. When bayesian == false the layer is a point
// estimate; log_var is carried but ignored and never updated.
struct VariationalParam {
  std::string layer_id;
  Tensor mu;
  Tensor log_var;
  bool bayesian = true;
  std::optional<Tensor> prune_mask;  // 1 keeps a coordinate, 0 silences it

  size_t size() const { return mu.size(); }
};

enum class ParamInit { TruncNormal, Zeros, Ones };

/// TruncNormal draws mu ~ trunc_normal(std=0.02, cut ±2 std); the init stream
/// is keyed by (seed, layer_id) and does not depend on the bayesian flag.
VariationalParam make_param(std::string layer_id, Shape shape, uint64_t seed, ParamInit init,
                            double init_log_var = -10.0, bool bayesian = true);

struct PosteriorSample {
  std::vector<Tensor> weights;  // aligned with the param list passed in
  uint64_t epsilon_seed = 0;
};

/// Epsilon for a layer is keyed by (seed, layer_id): the tape-bound and
/// value-only sampling paths see identical noise.
Tensor sample_epsilon(const Shape& shape, uint64_t seed, const std::string& layer_id);

/// w = mu + exp(log_var/2) * eps; returns mu bitwise when bayesian == false.
/// Masked coordinates are forced to exactly zero in either path.
Tensor sample_weights(const VariationalParam& p, uint64_t seed);
PosteriorSample sample_posterior(std::span<const VariationalParam> params, uint64_t seed);

/// MAP of a Gaussian posterior is its mean.
const Tensor& map_weights(const VariationalParam& p);

// Tape-bound view of one param for a training step.
struct BoundParam {
  Var mu;
  Var log_var;  // invalid when the layer is a point estimate
  Var weights;  // sampled (or mu) weights feeding the forward pass
};

BoundParam bind_param(Tape& tape, const VariationalParam& p, uint64_t seed, bool sample);

/// Closed-form diagonal-Gaussian KL(q || p), summed over coordinates, built
/// from primitives so it stays differentiable in mu and log_var.
Var kl_diag_gaussian(Tape& tape, const BoundParam& bound, const Tensor& prior_mu,
                     const Tensor& prior_var);
double kl_diag_gaussian_value(const VariationalParam& p, const Tensor& prior_mu,
                              const Tensor& prior_var);

/// Elementwise |mu| / sigma. Errors on point-estimate layers.
Tensor snr(const VariationalParam& p);

struct LayerStats {
  double mean_sigma = 0.0;
  double max_sigma = 0.0;
  double mean_snr = 0.0;
  double max_snr = 0.0;
};

LayerStats layer_stats(const VariationalParam& p);

}  // namespace byov

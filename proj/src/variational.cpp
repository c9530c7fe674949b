#include "byov/variational.hpp"

#include <algorithm>
#include <cmath>

#include "byov/rng.hpp"

namespace byov {

VariationalParam make_param(std::string layer_id, Shape shape, uint64_t seed, ParamInit init,
                            double init_log_var, bool bayesian) {
  VariationalParam p;
  p.layer_id = std::move(layer_id);
  p.bayesian = bayesian;
  p.log_var = Tensor(shape, init_log_var);
  switch (init) {
    case ParamInit::Zeros:
      p.mu = Tensor(shape, 0.0);
      break;
    case ParamInit::Ones:
      p.mu = Tensor(shape, 1.0);
      break;
    case ParamInit::TruncNormal: {
      p.mu = Tensor(shape);
      RngStream rng(derive_key(seed, "init/" + p.layer_id));
      for (size_t i = 0; i < p.mu.size(); ++i) p.mu[i] = rng.trunc_normal(0.02);
      break;
    }
  }
  return p;
}

Tensor sample_epsilon(const Shape& shape, uint64_t seed, const std::string& layer_id) {
  CounterRng rng(derive_key(seed, "eps/" + layer_id));
  Tensor eps(shape);
  for (size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal(i);
  return eps;
}

Tensor sample_weights(const VariationalParam& p, uint64_t seed) {
  if (!p.bayesian) {
    Tensor w = p.mu;
    if (p.prune_mask) w = mul(w, *p.prune_mask);
    return w;
  }
  Tensor eps = sample_epsilon(p.mu.shape(), seed, p.layer_id);
  Tensor w(p.mu.shape());
  for (size_t i = 0; i < w.size(); ++i) {
    w[i] = p.mu[i] + std::exp(0.5 * p.log_var[i]) * eps[i];
  }
  if (p.prune_mask) w = mul(w, *p.prune_mask);
  return w;
}

PosteriorSample sample_posterior(std::span<const VariationalParam> params, uint64_t seed) {
  PosteriorSample s;
  s.epsilon_seed = seed;
  s.weights.reserve(params.size());
  for (const VariationalParam& p : params) s.weights.push_back(sample_weights(p, seed));
  return s;
}

const Tensor& map_weights(const VariationalParam& p) { return p.mu; }

BoundParam bind_param(Tape& tape, const VariationalParam& p, uint64_t seed, bool sample) {
  BoundParam b;
  b.mu = tape.param(p.mu);
  if (p.bayesian) b.log_var = tape.param(p.log_var);
  if (p.bayesian && sample) {
    Var eps = tape.constant(sample_epsilon(p.mu.shape(), seed, p.layer_id));
    Var sigma = exp(mul(b.log_var, 0.5));
    b.weights = add(b.mu, mul(sigma, eps));
  } else {
    b.weights = b.mu;
  }
  if (p.prune_mask) b.weights = mul(b.weights, tape.constant(*p.prune_mask));
  return b;
}

Var kl_diag_gaussian(Tape& tape, const BoundParam& bound, const Tensor& prior_mu,
                     const Tensor& prior_var) {
  const Tensor& mu_q = bound.mu.value();
  if (!mu_q.same_shape(prior_mu) || !mu_q.same_shape(prior_var)) {
    throw ShapeError("kl_to_prior: shape mismatch between posterior " + mu_q.shape_string() +
                     " and prior " + prior_mu.shape_string() + "/" + prior_var.shape_string());
  }
  Tensor log_var_p(prior_var.shape());
  Tensor inv_var_p(prior_var.shape());
  for (size_t i = 0; i < prior_var.size(); ++i) {
    if (prior_var[i] <= 0.0) throw ValueError("kl_to_prior: non-positive prior variance");
    log_var_p[i] = std::log(prior_var[i]);
    inv_var_p[i] = 1.0 / prior_var[i];
  }
  Var c_logvp = tape.constant(std::move(log_var_p));
  Var c_invvp = tape.constant(std::move(inv_var_p));
  Var c_mup = tape.constant(prior_mu);

  // 1/2 sum[ log var_p - log var_q + (var_q + (mu_q - mu_p)^2)/var_p - 1 ]
  Var diff = sub(bound.mu, c_mup);
  Var ratio = mul(add(exp(bound.log_var), mul(diff, diff)), c_invvp);
  Var inner = add(add(sub(c_logvp, bound.log_var), ratio), -1.0);
  return mul(sum(inner), 0.5);
}

double kl_diag_gaussian_value(const VariationalParam& p, const Tensor& prior_mu,
                              const Tensor& prior_var) {
  if (!p.bayesian) throw ValueError("kl_to_prior: point-estimate layer '" + p.layer_id + "'");
  Tape scratch;
  BoundParam b = bind_param(scratch, p, 0, false);
  return kl_diag_gaussian(scratch, b, prior_mu, prior_var).value().item();
}

Tensor snr(const VariationalParam& p) {
  if (!p.bayesian) {
    throw ValueError("snr: layer '" + p.layer_id + "' is a point estimate (no posterior scale)");
  }
  Tensor out(p.mu.shape());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = std::fabs(p.mu[i]) / std::exp(0.5 * p.log_var[i]);
  }
  return out;
}

LayerStats layer_stats(const VariationalParam& p) {
  LayerStats s;
  if (!p.bayesian || p.size() == 0) return s;
  const double n = static_cast<double>(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    const double sigma = std::exp(0.5 * p.log_var[i]);
    const double ratio = std::fabs(p.mu[i]) / sigma;
    s.mean_sigma += sigma / n;
    s.mean_snr += ratio / n;
    s.max_sigma = std::max(s.max_sigma, sigma);
    s.max_snr = std::max(s.max_snr, ratio);
  }
  return s;
}

}  // namespace byov

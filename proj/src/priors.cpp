#include "byov/priors.hpp"

#include <algorithm>

namespace byov {

const char* prior_kind_name(PriorKind k) {
  switch (k) {
    case PriorKind::StandardNormal: return "standard_normal";
    case PriorKind::TeacherMean: return "teacher_mean";
    case PriorKind::TeacherMeanVar: return "teacher_mean_var";
  }
  return "?";
}

PriorKind parse_prior_kind(const std::string& s) {
  if (s == "standard_normal") return PriorKind::StandardNormal;
  if (s == "teacher_mean") return PriorKind::TeacherMean;
  if (s == "teacher_mean_var") return PriorKind::TeacherMeanVar;
  throw ConfigError("prior: unknown kind '" + s + "'");
}

PriorSpec make_prior(PriorKind kind, double gamma, double var_floor,
                     std::span<const VariationalParam> student_at_init) {
  if (gamma < 0.0 || gamma >= 1.0) {
    throw ConfigError("prior: gamma must lie in [0,1), got " + std::to_string(gamma));
  }
  if (var_floor <= 0.0) throw ConfigError("prior: var_floor must be positive");
  PriorSpec prior;
  prior.kind = kind;
  prior.gamma = gamma;
  prior.var_floor = var_floor;
  if (kind == PriorKind::TeacherMeanVar) {
    for (const VariationalParam& p : student_at_init) {
      prior.sq_ema.emplace(p.layer_id, mul(p.mu, p.mu));
    }
  }
  return prior;
}

void update_prior(PriorSpec& prior, const std::map<std::string, const Tensor*>& teacher_weights,
                  std::span<const VariationalParam> student) {
  if (prior.kind == PriorKind::StandardNormal) return;
  for (const VariationalParam& p : student) {
    auto it = teacher_weights.find(p.layer_id);
    if (it == teacher_weights.end()) continue;  // no teacher counterpart: keep N(0, I)
    const Tensor& tw = *it->second;
    prior.mu_p.insert_or_assign(p.layer_id, tw);
    if (prior.kind != PriorKind::TeacherMeanVar) continue;

    Tensor& ema = prior.sq_ema.at(p.layer_id);
    Tensor var(tw.shape());
    for (size_t i = 0; i < ema.size(); ++i) {
      ema[i] = prior.gamma * ema[i] + (1.0 - prior.gamma) * p.mu[i] * p.mu[i];
      var[i] = std::max(tw[i] * tw[i] - ema[i], prior.var_floor);
    }
    prior.var_p.insert_or_assign(p.layer_id, std::move(var));
  }
}

std::pair<Tensor, Tensor> prior_moments(const PriorSpec& prior, const VariationalParam& p) {
  Tensor mu(p.mu.shape(), 0.0);
  Tensor var(p.mu.shape(), 1.0);
  auto mit = prior.mu_p.find(p.layer_id);
  if (mit != prior.mu_p.end()) mu = mit->second;
  auto vit = prior.var_p.find(p.layer_id);
  if (vit != prior.var_p.end()) var = vit->second;
  return {std::move(mu), std::move(var)};
}

}  // namespace byov

#pragma once

#include <map>
#include <string>
#include <vector>

#include "byov/tensor.hpp"
#include "byov/variational.hpp"

namespace byov {

enum class PriorKind { StandardNormal, TeacherMean, TeacherMeanVar };

const char* prior_kind_name(PriorKind k);
PriorKind parse_prior_kind(const std::string& s);

// Weight prior shared across layers. StandardNormal keeps no per-layer state.
// TeacherMean pins prior means to the teacher weights. TeacherMeanVar also
// estimates a prior variance from the spread between the teacher weights and
// an EMA of the squared student means, floored at var_floor because that
// difference can go negative early in training.
struct PriorSpec {
  PriorKind kind = PriorKind::StandardNormal;
  double gamma = 0.996;      // EMA decay for the second-moment tracker
  double var_floor = 1e-8;
  std::map<std::string, Tensor> mu_p;    // per layer_id
  std::map<std::string, Tensor> var_p;   // per layer_id
  std::map<std::string, Tensor> sq_ema;  // per layer_id, tracks mu_S^2
};

/// sq_ema starts at mu_S^2 of the initial student so the first variance
/// estimate is not spuriously large.
PriorSpec make_prior(PriorKind kind, double gamma, double var_floor,
                     std::span<const VariationalParam> student_at_init);

/// Call once per optimizer step, after the teacher EMA update. Layers absent
/// from teacher_weights (e.g. the predictor) keep the N(0, I) fallback.
void update_prior(PriorSpec& prior, const std::map<std::string, const Tensor*>& teacher_weights,
                  std::span<const VariationalParam> student);

/// Resolved (mu_p, var_p) for one layer; N(0, I) wherever no state is held.
std::pair<Tensor, Tensor> prior_moments(const PriorSpec& prior, const VariationalParam& p);

}  // namespace byov

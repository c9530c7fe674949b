#include "byov/optimizer.hpp"

#include <cmath>

#include "byov/priors.hpp"

namespace byov {

OptKind parse_opt_kind(const std::string& s) {
  if (s == "sgd") return OptKind::Sgd;
  if (s == "adam") return OptKind::Adam;
  throw ConfigError("optimizer: unknown kind '" + s + "'");
}

void Optimizer::step(const std::vector<Update>& updates) {
  if (updates.size() != m_.size()) {
    throw ValueError("optimizer: got " + std::to_string(updates.size()) + " updates for " +
                     std::to_string(m_.size()) + " slots");
  }
  ++t_;
  for (size_t s = 0; s < updates.size(); ++s) {
    Tensor* p = updates[s].param;
    const Tensor* g = updates[s].grad;
    if (!p || !g) continue;
    if (m_[s].empty()) m_[s] = Tensor(p->shape());
    if (cfg_.kind == OptKind::Adam && v_[s].empty()) v_[s] = Tensor(p->shape());

    if (cfg_.kind == OptKind::Sgd) {
      for (size_t i = 0; i < p->size(); ++i) {
        const double gi = (*g)[i] + cfg_.weight_decay * (*p)[i];
        m_[s][i] = cfg_.momentum * m_[s][i] + gi;
        (*p)[i] -= cfg_.lr * m_[s][i];
      }
    } else {
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (size_t i = 0; i < p->size(); ++i) {
        const double gi = (*g)[i] + cfg_.weight_decay * (*p)[i];
        m_[s][i] = cfg_.beta1 * m_[s][i] + (1.0 - cfg_.beta1) * gi;
        v_[s][i] = cfg_.beta2 * v_[s][i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m_[s][i] / c1;
        const double vhat = v_[s][i] / c2;
        (*p)[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }
}

}  // namespace byov

#pragma once

#include <string>
#include <vector>

#include "byov/tensor.hpp"

namespace byov {

enum class OptKind { Sgd, Adam };

OptKind parse_opt_kind(const std::string& s);

struct OptConfig {
  OptKind kind = OptKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // Adam
  double weight_decay = 0.0;  // L2 into the gradient; must be 0 for Bayesian layers
};

// One slot per parameter tensor; state buffers are lazily shaped on the
// first step. Slots with a null param pointer are skipped.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptConfig cfg, size_t n_slots) : cfg_(cfg), m_(n_slots), v_(n_slots) {}

  struct Update {
    Tensor* param = nullptr;
    const Tensor* grad = nullptr;
  };

  void step(const std::vector<Update>& updates);

  const OptConfig& config() const { return cfg_; }
  long steps_taken() const { return t_; }

  // exposed for checkpointing
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  const std::vector<Tensor>& moment1() const { return m_; }
  const std::vector<Tensor>& moment2() const { return v_; }
  void set_steps_taken(long t) { t_ = t; }

 private:
  OptConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace byov

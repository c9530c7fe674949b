#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "byov/tape.hpp"
#include "byov/tensor.hpp"
#include "byov/variational.hpp"

namespace byov {

enum class Nonlinearity { Relu, Tanh };
enum class BayesianScope { All, LinearOnly, NoConv };
enum class ModelKind { Byov, DeterministicByol, SupervisedBbb };

Nonlinearity parse_nonlinearity(const std::string& s);
BayesianScope parse_scope(const std::string& s);
const char* scope_name(BayesianScope s);

struct NetworkSpec {
  size_t image_c = 1, image_h = 28, image_w = 28;
  bool patch_conv = false;          // strided patch-embedding front end
  size_t patch_size = 4;
  size_t patch_embed_dim = 16;
  std::vector<size_t> encoder_hidden = {256, 128};
  bool encoder_layer_norm = true;
  // layer norm after the hidden linear of the projector/predictor MLPs;
  // keeps their activations O(1) under the 0.02 trunc-normal init
  bool mlp_layer_norm = true;
  Nonlinearity activation = Nonlinearity::Relu;
  size_t projector_hidden = 64;
  size_t projector_out = 32;
  size_t predictor_hidden = 64;     // predictor maps projector_out -> projector_out
  size_t num_classes = 10;          // supervised head width
  BayesianScope scope = BayesianScope::All;

  void validate() const;
  size_t flat_input_dim() const { return image_c * image_h * image_w; }
  size_t repr_dim() const { return encoder_hidden.back(); }
};

enum class StepKind { Dense, LayerNormOp, Activation };

struct ForwardStep {
  StepKind kind;
  int w = -1, b = -1;  // param indices for Dense / LayerNormOp (gain, offset)
};

struct SubnetPlan {
  std::vector<ForwardStep> steps;
};

// Ordered parameter list plus interpretable forward plans. The same plans
// run with tape-bound weights (training) or plain tensors (teacher, eval).
struct Model {
  ModelKind kind = ModelKind::Byov;
  NetworkSpec spec;
  std::vector<VariationalParam> params;
  int patch_w = -1, patch_b = -1;
  SubnetPlan encoder, projector, predictor, head;
  std::vector<size_t> teacher_tracked;  // encoder + projector param indices

  static Model build(ModelKind kind, const NetworkSpec& spec, uint64_t seed,
                     double init_log_var = -10.0);

  const VariationalParam* find_param(const std::string& layer_id) const;
  VariationalParam* find_param(const std::string& layer_id);
  bool any_bayesian() const;
};

// Deterministic EMA copy of the student encoder + projector means. Indexed
// like Model::params; entries outside teacher_tracked stay empty. Receives
// no gradients by construction (value-only forward).
struct TeacherState {
  double tau = 0.996;
  std::vector<Tensor> weights;
};

TeacherState make_teacher(const Model& m, double tau);
void update_teacher(TeacherState& t, const Model& m);  // w <- tau w + (1-tau) mu
std::map<std::string, const Tensor*> teacher_weight_map(const TeacherState& t, const Model& m);

// ---- forward passes

struct StudentTapeOut {
  Var h, z, p;  // p is L2-normalized
};
struct StudentValueOut {
  Tensor h, z, p;
};

std::vector<BoundParam> bind_model(Tape& tape, const Model& m, uint64_t seed, bool sample);

StudentTapeOut student_forward(Tape& tape, const Model& m, std::span<const BoundParam> bound,
                               const Tensor& x);
StudentValueOut student_forward(const Model& m, std::span<const Tensor> weights, const Tensor& x);
/// Projection z_t of the teacher branch (unnormalized, like the student z).
Tensor teacher_forward(const Model& m, const TeacherState& t, const Tensor& x);

Tensor encoder_forward(const Model& m, std::span<const Tensor> weights, const Tensor& x);
/// Runs one subnet plan on an already-featurized input (h or z).
Tensor subnet_forward(const Model& m, const SubnetPlan& plan, std::span<const Tensor> weights,
                      const Tensor& input);
Var head_logits(Tape& tape, const Model& m, std::span<const BoundParam> bound, const Tensor& x);
Tensor head_logits(const Model& m, std::span<const Tensor> weights, const Tensor& x);

/// Weights for the value paths: posterior sample (seeded) or MAP.
std::vector<Tensor> sampled_weights(const Model& m, uint64_t seed);
std::vector<Tensor> map_weights(const Model& m);

// ---- distillation loss
//
// Symmetric form over the two augmentations; each term is 2 - 2 cos, so the
// total lies in [0, 8]. p1/p2 must already be L2-normalized (student_forward
// guarantees this); the teacher projections are normalized here, outside the
// tape, which is what makes the teacher a constant of the step.
Var byol_loss(Tape& tape, const Var& p1_norm, const Tensor& z2_teacher, const Var& p2_norm,
              const Tensor& z1_teacher);
double byol_loss_value(const Tensor& p1_norm, const Tensor& z2_teacher, const Tensor& p2_norm,
                       const Tensor& z1_teacher);

}  // namespace byov

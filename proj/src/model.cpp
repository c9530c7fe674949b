#include "byov/model.hpp"

#include <algorithm>

#include "byov/priors.hpp"
#include "byov/rng.hpp"

namespace byov {

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "relu") return Nonlinearity::Relu;
  if (s == "tanh") return Nonlinearity::Tanh;
  throw ConfigError("model: unknown activation '" + s + "'");
}

BayesianScope parse_scope(const std::string& s) {
  if (s == "all") return BayesianScope::All;
  if (s == "linear_only") return BayesianScope::LinearOnly;
  if (s == "no_conv") return BayesianScope::NoConv;
  throw ConfigError("model: unknown bayesian_scope '" + s + "'");
}

const char* scope_name(BayesianScope s) {
  switch (s) {
    case BayesianScope::All: return "all";
    case BayesianScope::LinearOnly: return "linear_only";
    case BayesianScope::NoConv: return "no_conv";
  }
  return "?";
}

void NetworkSpec::validate() const {
  if (encoder_hidden.empty()) throw ConfigError("model: encoder_hidden must not be empty");
  if (projector_hidden == 0 || projector_out == 0 || predictor_hidden == 0) {
    throw ConfigError("model: projector/predictor dims must be positive");
  }
  if (patch_conv) {
    if (image_h % patch_size != 0 || image_w % patch_size != 0) {
      throw ConfigError("model: patch_size must tile the image");
    }
  }
  // The loss compares the predictor output with the teacher projection,
  // so predictor in == predictor out == projector_out by construction here;
  // nothing further to check, the plan builder enforces it.
}

namespace {

// layers a teacher tracks: everything in encoder (incl. patch embed) + projector
enum class Part { Patch, Encoder, Projector, Predictor, Head };

bool layer_is_bayesian(BayesianScope scope, Part part, bool is_layer_norm) {
  switch (scope) {
    case BayesianScope::All:
      return true;
    case BayesianScope::LinearOnly:
      return !is_layer_norm && part != Part::Patch;
    case BayesianScope::NoConv:
      return part != Part::Patch;
  }
  return true;
}

}  // namespace

Model Model::build(ModelKind kind, const NetworkSpec& spec, uint64_t seed, double init_log_var) {
  spec.validate();
  Model m;
  m.kind = kind;
  m.spec = spec;
  const bool master_bayesian = kind != ModelKind::DeterministicByol;

  auto add_param = [&](std::string id, Shape shape, ParamInit init, Part part,
                       bool is_ln) -> int {
    const bool bayes = master_bayesian && layer_is_bayesian(spec.scope, part, is_ln);
    m.params.push_back(make_param(std::move(id), std::move(shape), seed, init, init_log_var, bayes));
    const int idx = static_cast<int>(m.params.size() - 1);
    if (part == Part::Patch || part == Part::Encoder || part == Part::Projector) {
      m.teacher_tracked.push_back(static_cast<size_t>(idx));
    }
    return idx;
  };

  auto add_dense = [&](SubnetPlan& plan, const std::string& prefix, size_t in, size_t out,
                       Part part) {
    ForwardStep s{StepKind::Dense};
    s.w = add_param(prefix + ".w", {in, out}, ParamInit::TruncNormal, part, false);
    s.b = add_param(prefix + ".b", {out}, ParamInit::Zeros, part, false);
    plan.steps.push_back(s);
  };

  size_t d = spec.flat_input_dim();
  if (spec.patch_conv) {
    const size_t pdim = spec.image_c * spec.patch_size * spec.patch_size;
    m.patch_w = add_param("patch.w", {pdim, spec.patch_embed_dim}, ParamInit::TruncNormal,
                          Part::Patch, false);
    m.patch_b = add_param("patch.b", {spec.patch_embed_dim}, ParamInit::Zeros, Part::Patch, false);
    const size_t n_patches = (spec.image_h / spec.patch_size) * (spec.image_w / spec.patch_size);
    d = n_patches * spec.patch_embed_dim;
  }

  for (size_t k = 0; k < spec.encoder_hidden.size(); ++k) {
    const std::string prefix = "encoder." + std::to_string(k);
    add_dense(m.encoder, prefix, d, spec.encoder_hidden[k], Part::Encoder);
    d = spec.encoder_hidden[k];
    if (spec.encoder_layer_norm) {
      ForwardStep ln{StepKind::LayerNormOp};
      ln.w = add_param(prefix + ".ln.g", {d}, ParamInit::Ones, Part::Encoder, true);
      ln.b = add_param(prefix + ".ln.o", {d}, ParamInit::Zeros, Part::Encoder, true);
      m.encoder.steps.push_back(ln);
    }
    m.encoder.steps.push_back(ForwardStep{StepKind::Activation});
  }

  auto add_mlp_ln = [&](SubnetPlan& plan, const std::string& prefix, size_t dim, Part part) {
    if (!spec.mlp_layer_norm) return;
    ForwardStep ln{StepKind::LayerNormOp};
    ln.w = add_param(prefix + ".ln.g", {dim}, ParamInit::Ones, part, true);
    ln.b = add_param(prefix + ".ln.o", {dim}, ParamInit::Zeros, part, true);
    plan.steps.push_back(ln);
  };

  if (kind == ModelKind::SupervisedBbb) {
    add_dense(m.head, "head", spec.repr_dim(), spec.num_classes, Part::Head);
  } else {
    add_dense(m.projector, "projector.0", spec.repr_dim(), spec.projector_hidden, Part::Projector);
    add_mlp_ln(m.projector, "projector.0", spec.projector_hidden, Part::Projector);
    m.projector.steps.push_back(ForwardStep{StepKind::Activation});
    add_dense(m.projector, "projector.1", spec.projector_hidden, spec.projector_out,
              Part::Projector);

    add_dense(m.predictor, "predictor.0", spec.projector_out, spec.predictor_hidden,
              Part::Predictor);
    add_mlp_ln(m.predictor, "predictor.0", spec.predictor_hidden, Part::Predictor);
    m.predictor.steps.push_back(ForwardStep{StepKind::Activation});
    add_dense(m.predictor, "predictor.1", spec.predictor_hidden, spec.projector_out,
              Part::Predictor);
  }
  return m;
}

const VariationalParam* Model::find_param(const std::string& layer_id) const {
  for (const VariationalParam& p : params) {
    if (p.layer_id == layer_id) return &p;
  }
  return nullptr;
}

VariationalParam* Model::find_param(const std::string& layer_id) {
  for (VariationalParam& p : params) {
    if (p.layer_id == layer_id) return &p;
  }
  return nullptr;
}

bool Model::any_bayesian() const {
  return std::any_of(params.begin(), params.end(),
                     [](const VariationalParam& p) { return p.bayesian; });
}

TeacherState make_teacher(const Model& m, double tau) {
  if (tau < 0.0 || tau > 1.0) throw ConfigError("teacher: tau must lie in [0,1]");
  TeacherState t;
  t.tau = tau;
  t.weights.resize(m.params.size());
  for (size_t i : m.teacher_tracked) t.weights[i] = m.params[i].mu;
  return t;
}

void update_teacher(TeacherState& t, const Model& m) {
  for (size_t i : m.teacher_tracked) {
    Tensor& w = t.weights[i];
    const Tensor& mu = m.params[i].mu;
    for (size_t j = 0; j < w.size(); ++j) w[j] = t.tau * w[j] + (1.0 - t.tau) * mu[j];
  }
}

std::map<std::string, const Tensor*> teacher_weight_map(const TeacherState& t, const Model& m) {
  std::map<std::string, const Tensor*> out;
  for (size_t i : m.teacher_tracked) out.emplace(m.params[i].layer_id, &t.weights[i]);
  return out;
}

// ---- plan interpreter, shared between the Var and Tensor paths

namespace {

const Shape& value_shape(const Var& v) { return v.value().shape(); }
const Shape& value_shape(const Tensor& t) { return t.shape(); }

template <typename V, typename GetW>
V run_plan(const SubnetPlan& plan, V x, GetW&& w, Nonlinearity act) {
  for (const ForwardStep& s : plan.steps) {
    switch (s.kind) {
      case StepKind::Dense:
        x = add_rowvec(matmul(x, w(s.w)), w(s.b));
        break;
      case StepKind::LayerNormOp:
        x = layer_norm(x, w(s.w), w(s.b));
        break;
      case StepKind::Activation:
        x = act == Nonlinearity::Relu ? relu(x) : tanh(x);
        break;
    }
  }
  return x;
}

// [N,C,H,W] (or already-flat [N,d]) -> [N, feature_dim]
template <typename V, typename GetW>
V featurize(const Model& m, V x, GetW&& w) {
  const Shape& sh = value_shape(x);
  const size_t n = sh[0];
  if (m.spec.patch_conv) {
    if (sh.size() != 4) {
      throw ShapeError("forward: patch front end expects [N,C,H,W], got " + shape_str(sh));
    }
    V p = patches(x, m.spec.patch_size, m.spec.patch_size);
    p = add_rowvec(matmul(p, w(m.patch_w)), w(m.patch_b));
    const size_t np = (m.spec.image_h / m.spec.patch_size) * (m.spec.image_w / m.spec.patch_size);
    return reshape(p, {n, np * m.spec.patch_embed_dim});
  }
  const size_t d = shape_size(sh) / n;
  if (d != m.spec.flat_input_dim()) {
    throw ShapeError("forward: input " + shape_str(sh) + " does not match model input dim " +
                     std::to_string(m.spec.flat_input_dim()));
  }
  return reshape(x, {n, d});
}

}  // namespace

std::vector<BoundParam> bind_model(Tape& tape, const Model& m, uint64_t seed, bool sample) {
  std::vector<BoundParam> bound;
  bound.reserve(m.params.size());
  for (const VariationalParam& p : m.params) bound.push_back(bind_param(tape, p, seed, sample));
  return bound;
}

StudentTapeOut student_forward(Tape& tape, const Model& m, std::span<const BoundParam> bound,
                               const Tensor& x) {
  auto w = [&](int i) { return bound[static_cast<size_t>(i)].weights; };
  Var feat = featurize(m, tape.constant(x), w);
  StudentTapeOut out;
  out.h = run_plan(m.encoder, feat, w, m.spec.activation);
  out.z = run_plan(m.projector, out.h, w, m.spec.activation);
  out.p = l2_normalize_lastaxis(run_plan(m.predictor, out.z, w, m.spec.activation));
  return out;
}

StudentValueOut student_forward(const Model& m, std::span<const Tensor> weights, const Tensor& x) {
  auto w = [&](int i) -> const Tensor& { return weights[static_cast<size_t>(i)]; };
  Tensor feat = featurize(m, x, w);
  StudentValueOut out;
  out.h = run_plan(m.encoder, feat, w, m.spec.activation);
  out.z = run_plan(m.projector, out.h, w, m.spec.activation);
  out.p = l2_normalize_lastaxis(run_plan(m.predictor, out.z, w, m.spec.activation));
  return out;
}

Tensor teacher_forward(const Model& m, const TeacherState& t, const Tensor& x) {
  auto w = [&](int i) -> const Tensor& { return t.weights[static_cast<size_t>(i)]; };
  Tensor feat = featurize(m, x, w);
  Tensor h = run_plan(m.encoder, feat, w, m.spec.activation);
  return run_plan(m.projector, h, w, m.spec.activation);
}

Tensor encoder_forward(const Model& m, std::span<const Tensor> weights, const Tensor& x) {
  auto w = [&](int i) -> const Tensor& { return weights[static_cast<size_t>(i)]; };
  return run_plan(m.encoder, featurize(m, x, w), w, m.spec.activation);
}

Tensor subnet_forward(const Model& m, const SubnetPlan& plan, std::span<const Tensor> weights,
                      const Tensor& input) {
  auto w = [&](int i) -> const Tensor& { return weights[static_cast<size_t>(i)]; };
  return run_plan(plan, input, w, m.spec.activation);
}

Var head_logits(Tape& tape, const Model& m, std::span<const BoundParam> bound, const Tensor& x) {
  auto w = [&](int i) { return bound[static_cast<size_t>(i)].weights; };
  Var h = run_plan(m.encoder, featurize(m, tape.constant(x), w), w, m.spec.activation);
  return run_plan(m.head, h, w, m.spec.activation);
}

Tensor head_logits(const Model& m, std::span<const Tensor> weights, const Tensor& x) {
  auto w = [&](int i) -> const Tensor& { return weights[static_cast<size_t>(i)]; };
  Tensor h = run_plan(m.encoder, featurize(m, x, w), w, m.spec.activation);
  return run_plan(m.head, h, w, m.spec.activation);
}

std::vector<Tensor> sampled_weights(const Model& m, uint64_t seed) {
  std::vector<Tensor> out;
  out.reserve(m.params.size());
  for (const VariationalParam& p : m.params) out.push_back(sample_weights(p, seed));
  return out;
}

std::vector<Tensor> map_weights(const Model& m) {
  std::vector<Tensor> out;
  out.reserve(m.params.size());
  for (const VariationalParam& p : m.params) {
    out.push_back(p.prune_mask ? mul(p.mu, *p.prune_mask) : p.mu);
  }
  return out;
}

// ---- loss

namespace {

Var byol_pair_term(Tape& tape, const Var& p_norm, const Tensor& z_teacher) {
  Tensor zt = l2_normalize_lastaxis(z_teacher);
  Var cos = sum_lastaxis(mul(p_norm, tape.constant(std::move(zt))));
  return add(mul(mean(cos), -2.0), 2.0);
}

double byol_pair_term_value(const Tensor& p_norm, const Tensor& z_teacher) {
  Tensor zt = l2_normalize_lastaxis(z_teacher);
  return 2.0 - 2.0 * mean(sum_lastaxis(mul(p_norm, zt))).item();
}

}  // namespace

Var byol_loss(Tape& tape, const Var& p1_norm, const Tensor& z2_teacher, const Var& p2_norm,
              const Tensor& z1_teacher) {
  return add(byol_pair_term(tape, p1_norm, z2_teacher), byol_pair_term(tape, p2_norm, z1_teacher));
}

double byol_loss_value(const Tensor& p1_norm, const Tensor& z2_teacher, const Tensor& p2_norm,
                       const Tensor& z1_teacher) {
  return byol_pair_term_value(p1_norm, z2_teacher) + byol_pair_term_value(p2_norm, z1_teacher);
}

}  // namespace byov

#include "byov/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "byov/rng.hpp"

namespace byov {

double BetaSchedule::at(long step) const {
  if (total_steps <= 0) throw ConfigError("beta schedule: total_steps must be positive");
  const long t = std::clamp(step, 0L, total_steps);
  if (t == 0) return beta_start;
  if (t == total_steps) return beta_end;  // exact endpoints, no rounding residue
  const double phase = 3.14159265358979323846 * static_cast<double>(t) / static_cast<double>(total_steps);
  return beta_start + (beta_end - beta_start) * (1.0 - std::cos(phase)) / 2.0;
}

void TrainSettings::validate() const {
  net.validate();
  if (batch_size == 0 || epochs == 0) throw ConfigError("train: batch_size and epochs must be positive");
  if (beta_start < 0.0 || beta_end < 0.0) throw ConfigError("train: beta must be non-negative");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("train: tau must lie in [0,1]");
  if (kind != ModelKind::DeterministicByol && opt.weight_decay != 0.0) {
    throw ConfigError("train: weight_decay must be 0 when any layer is Bayesian");
  }
}

TrainState TrainState::init(const TrainSettings& cfg, size_t n_train) {
  cfg.validate();
  const size_t steps_per_epoch = n_train / cfg.batch_size;
  if (steps_per_epoch == 0) {
    throw ConfigError("train: batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds dataset size " + std::to_string(n_train));
  }
  TrainState ts{cfg,
                Model::build(cfg.kind, cfg.net, cfg.seed, cfg.init_log_var),
                TeacherState{},
                PriorSpec{},
                Optimizer(cfg.opt, 0),
                BetaSchedule{cfg.beta_start, cfg.beta_end,
                             static_cast<long>(cfg.epochs * steps_per_epoch)},
                0};
  ts.teacher = make_teacher(ts.model, cfg.tau);
  ts.prior = make_prior(cfg.prior_kind, cfg.prior_gamma, cfg.prior_var_floor, ts.model.params);
  ts.opt = Optimizer(cfg.opt, 2 * ts.model.params.size());
  return ts;
}

namespace {

void abort_on_nonfinite(const Tape& tape, const Var& loss, long step) {
  if (loss.value().all_finite()) return;
  std::string where = "loss";
  if (auto bad = tape.first_nonfinite()) {
    where = "op '" + bad->first + "' (tape node " + std::to_string(bad->second) + ")";
  }
  throw NanError("train_step: non-finite value in " + where + " at step " + std::to_string(step));
}

// slot layout: 2i = mu, 2i+1 = log_var of param i
std::vector<Optimizer::Update> collect_updates(Model& model, std::span<const BoundParam> bound) {
  std::vector<Optimizer::Update> ups(2 * model.params.size());
  for (size_t i = 0; i < model.params.size(); ++i) {
    VariationalParam& p = model.params[i];
    ups[2 * i] = {&p.mu, &bound[i].mu.grad()};
    if (p.bayesian) ups[2 * i + 1] = {&p.log_var, &bound[i].log_var.grad()};
  }
  return ups;
}

struct ObjectiveParts {
  Var total;
  double kl_value = 0.0;
};

// total = task_loss + beta * KL(q || prior), summed over Bayesian layers
ObjectiveParts assemble_objective(Tape& tape, const TrainState& ts,
                                  std::span<const BoundParam> bound, Var task_loss, double beta) {
  Var kl;
  bool any = false;
  for (size_t i = 0; i < ts.model.params.size(); ++i) {
    const VariationalParam& p = ts.model.params[i];
    if (!p.bayesian) continue;
    auto [mu_p, var_p] = prior_moments(ts.prior, p);
    Var layer_kl = kl_diag_gaussian(tape, bound[i], mu_p, var_p);
    kl = any ? add(kl, layer_kl) : layer_kl;
    any = true;
  }
  if (!any) return {task_loss, 0.0};
  return {add(task_loss, mul(kl, beta)), kl.value().item()};
}

}  // namespace

StepRecord train_step(TrainState& ts, const Tensor& x1, const Tensor& x2) {
  Tape tape;
  const uint64_t step_seed = derive_key(ts.cfg.seed, "step_eps", static_cast<uint64_t>(ts.step));
  std::vector<BoundParam> bound = bind_model(tape, ts.model, step_seed, /*sample=*/true);

  StudentTapeOut s1 = student_forward(tape, ts.model, bound, x1);
  StudentTapeOut s2 = student_forward(tape, ts.model, bound, x2);
  Tensor z1t = teacher_forward(ts.model, ts.teacher, x1);
  Tensor z2t = teacher_forward(ts.model, ts.teacher, x2);
  Var distill = byol_loss(tape, s1.p, z2t, s2.p, z1t);

  const double beta = ts.schedule.at(ts.step);
  auto [total, kl_value] = assemble_objective(tape, ts, bound, distill, beta);
  abort_on_nonfinite(tape, total, ts.step);
  tape.backward(total);
  ts.opt.step(collect_updates(ts.model, bound));
  update_teacher(ts.teacher, ts.model);
  update_prior(ts.prior, teacher_weight_map(ts.teacher, ts.model), ts.model.params);

  StepRecord rec;
  rec.step = ts.step;
  rec.epoch = 0;  // filled by the loop
  rec.loss_distill = distill.value().item();
  rec.kl = kl_value;
  rec.beta = beta;
  rec.loss_total = rec.loss_distill + beta * rec.kl;
  ++ts.step;
  return rec;
}

StepRecord train_step_supervised(TrainState& ts, const Tensor& x, const std::vector<int>& labels) {
  Tape tape;
  const uint64_t step_seed = derive_key(ts.cfg.seed, "step_eps", static_cast<uint64_t>(ts.step));
  std::vector<BoundParam> bound = bind_model(tape, ts.model, step_seed, /*sample=*/true);

  Var logits = head_logits(tape, ts.model, bound, x);
  const size_t n = x.shape()[0];
  const size_t classes = ts.model.spec.num_classes;
  Tensor onehot(Shape{n, classes});
  size_t correct = 0;
  for (size_t i = 0; i < n; ++i) {
    const int lab = labels[i];
    if (lab < 0 || static_cast<size_t>(lab) >= classes) {
      throw ValueError("train_step: label " + std::to_string(lab) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    onehot[i * classes + static_cast<size_t>(lab)] = 1.0;
    const double* row = logits.value().data() + i * classes;
    size_t arg = 0;
    for (size_t c2 = 1; c2 < classes; ++c2) {
      if (row[c2] > row[arg]) arg = c2;
    }
    if (arg == static_cast<size_t>(lab)) ++correct;
  }
  Var nll = mul(mean(sum_lastaxis(mul(log_softmax(logits), tape.constant(std::move(onehot))))), -1.0);

  const double beta = ts.schedule.at(ts.step);
  auto [total, kl_value] = assemble_objective(tape, ts, bound, nll, beta);
  abort_on_nonfinite(tape, total, ts.step);
  tape.backward(total);
  ts.opt.step(collect_updates(ts.model, bound));
  update_teacher(ts.teacher, ts.model);
  update_prior(ts.prior, teacher_weight_map(ts.teacher, ts.model), ts.model.params);

  StepRecord rec;
  rec.step = ts.step;
  rec.loss_distill = nll.value().item();
  rec.kl = kl_value;
  rec.beta = beta;
  rec.loss_total = rec.loss_distill + beta * rec.kl;
  rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
  ++ts.step;
  return rec;
}

Batch make_batch(const Dataset& data, const TrainSettings& cfg, size_t epoch, size_t batch_idx) {
  const size_t spe = data.n() / cfg.batch_size;
  if (batch_idx >= spe) throw ValueError("make_batch: batch index out of range");
  std::vector<size_t> order(data.n());
  std::iota(order.begin(), order.end(), 0);
  RngStream shuffler(derive_key(cfg.seed, "order", epoch));
  shuffler.shuffle(order);

  Batch b;
  const size_t c = data.c(), h = data.h(), w = data.w();
  const size_t img_sz = c * h * w;
  const bool paired = cfg.kind != ModelKind::SupervisedBbb;
  b.x1 = Tensor(Shape{cfg.batch_size, c, h, w});
  if (paired) b.x2 = Tensor(Shape{cfg.batch_size, c, h, w});
  const uint64_t aug_epoch_key = derive_key(cfg.seed, "aug", epoch);
  for (size_t k = 0; k < cfg.batch_size; ++k) {
    const size_t idx = order[batch_idx * cfg.batch_size + k];
    b.indices.push_back(idx);
    if (data.labels) b.labels.push_back((*data.labels)[idx]);
    const Tensor img = data.image(idx);
    const uint64_t key = mix_pair(aug_epoch_key, idx);
    if (paired) {
      auto [v1, v2] = two_views(img, cfg.augment, key);
      std::copy(v1.data(), v1.data() + img_sz, b.x1.data() + k * img_sz);
      std::copy(v2.data(), v2.data() + img_sz, b.x2.data() + k * img_sz);
    } else {
      Tensor v = augment(img, cfg.augment, derive_key(key, "view", 1));
      std::copy(v.data(), v.data() + img_sz, b.x1.data() + k * img_sz);
    }
  }
  return b;
}

void train_run(TrainState& ts, const Dataset& train, const StepHook& on_step,
               const EpochHook& on_epoch) {
  const size_t spe = train.n() / ts.cfg.batch_size;
  for (size_t epoch = 0; epoch < ts.cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    size_t steps_this_epoch = 0;
    for (size_t bi = 0; bi < spe; ++bi) {
      const long global = static_cast<long>(epoch * spe + bi);
      if (global < ts.step) continue;  // resume: skip already-trained steps
      Batch b = make_batch(train, ts.cfg, epoch, bi);
      StepRecord rec = ts.cfg.kind == ModelKind::SupervisedBbb
                           ? train_step_supervised(ts, b.x1, b.labels)
                           : train_step(ts, b.x1, b.x2);
      rec.epoch = epoch;
      loss_sum += rec.loss_total;
      ++steps_this_epoch;
      if (on_step) on_step(rec);
    }
    if (steps_this_epoch > 0 && on_epoch) {
      on_epoch(make_epoch_record(ts, epoch, loss_sum / static_cast<double>(steps_this_epoch)));
    }
  }
}

EpochRecord make_epoch_record(const TrainState& ts, size_t epoch, double mean_loss) {
  EpochRecord er;
  er.epoch = epoch;
  er.mean_loss = mean_loss;
  for (const VariationalParam& p : ts.model.params) {
    if (p.bayesian) er.layers.emplace_back(p.layer_id, layer_stats(p));
  }
  return er;
}

void save_train_state(const TrainState& ts, TensorStore& store) {
  for (const VariationalParam& p : ts.model.params) {
    store.put("param/" + p.layer_id + "/mu", p.mu);
    if (p.bayesian) store.put("param/" + p.layer_id + "/log_var", p.log_var);
    if (p.prune_mask) store.put("param/" + p.layer_id + "/mask", *p.prune_mask);
  }
  for (size_t i : ts.model.teacher_tracked) {
    store.put("teacher/" + ts.model.params[i].layer_id, ts.teacher.weights[i]);
  }
  for (const auto& [id, t] : ts.prior.mu_p) store.put("prior/mu/" + id, t);
  for (const auto& [id, t] : ts.prior.var_p) store.put("prior/var/" + id, t);
  for (const auto& [id, t] : ts.prior.sq_ema) store.put("prior/sq_ema/" + id, t);
  for (size_t i = 0; i < ts.model.params.size(); ++i) {
    const std::string& id = ts.model.params[i].layer_id;
    auto put_slot = [&](const std::string& tag, size_t slot) {
      if (!ts.opt.moment1()[slot].empty()) store.put("opt/m/" + id + "/" + tag, ts.opt.moment1()[slot]);
      if (!ts.opt.moment2()[slot].empty()) store.put("opt/v/" + id + "/" + tag, ts.opt.moment2()[slot]);
    };
    put_slot("mu", 2 * i);
    put_slot("log_var", 2 * i + 1);
  }
  store.put_scalar("meta/step", static_cast<double>(ts.step));
  store.put_scalar("meta/steps_per_epoch",
                   static_cast<double>(ts.schedule.total_steps / static_cast<long>(ts.cfg.epochs)));
  store.put_scalar("meta/opt_t", static_cast<double>(ts.opt.steps_taken()));
  store.put_scalar("meta/kind", static_cast<double>(static_cast<int>(ts.cfg.kind)));
  store.put_scalar("meta/tau", ts.teacher.tau);
}

TrainState restore_train_state(const TrainSettings& cfg, const TensorStore& store) {
  // the current config's epoch count wins; the stored grid fixes steps/epoch
  const size_t spe = static_cast<size_t>(store.get_scalar("meta/steps_per_epoch"));
  TrainState ts = TrainState::init(cfg, spe * cfg.batch_size);
  for (size_t i = 0; i < ts.model.params.size(); ++i) {
    VariationalParam& p = ts.model.params[i];
    p.mu = store.get("param/" + p.layer_id + "/mu");
    if (p.bayesian) p.log_var = store.get("param/" + p.layer_id + "/log_var");
    if (const Tensor* mask = store.find("param/" + p.layer_id + "/mask")) p.prune_mask = *mask;
  }
  for (size_t i : ts.model.teacher_tracked) {
    ts.teacher.weights[i] = store.get("teacher/" + ts.model.params[i].layer_id);
  }
  for (const VariationalParam& p : ts.model.params) {
    if (const Tensor* t = store.find("prior/mu/" + p.layer_id)) ts.prior.mu_p.insert_or_assign(p.layer_id, *t);
    if (const Tensor* t = store.find("prior/var/" + p.layer_id)) ts.prior.var_p.insert_or_assign(p.layer_id, *t);
    if (const Tensor* t = store.find("prior/sq_ema/" + p.layer_id)) ts.prior.sq_ema.insert_or_assign(p.layer_id, *t);
  }
  for (size_t i = 0; i < ts.model.params.size(); ++i) {
    const std::string& id = ts.model.params[i].layer_id;
    auto get_slot = [&](const std::string& tag, size_t slot) {
      if (const Tensor* t = store.find("opt/m/" + id + "/" + tag)) ts.opt.moment1()[slot] = *t;
      if (const Tensor* t = store.find("opt/v/" + id + "/" + tag)) ts.opt.moment2()[slot] = *t;
    };
    get_slot("mu", 2 * i);
    get_slot("log_var", 2 * i + 1);
  }
  ts.step = static_cast<long>(store.get_scalar("meta/step"));
  ts.opt.set_steps_taken(static_cast<long>(store.get_scalar("meta/opt_t")));
  return ts;
}

}  // namespace byov

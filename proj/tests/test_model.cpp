#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "byov/model.hpp"
#include "byov/rng.hpp"
#include "oracles.hpp"

using namespace byov;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.image_c = 1;
  s.image_h = 4;
  s.image_w = 4;
  s.encoder_hidden = {8, 6};
  s.encoder_layer_norm = true;
  s.projector_hidden = 5;
  s.projector_out = 4;
  s.predictor_hidden = 5;
  return s;
}

Tensor tiny_batch(size_t n, uint64_t key) { return byov::testing::random_tensor({n, 1, 4, 4}, key, 0.3); }

}  // namespace

TEST_CASE("zero-weight network yields the normalized bias path, never NaN") {
  Model m = Model::build(ModelKind::Byov, tiny_spec(), 1);
  for (VariationalParam& p : m.params) {
    p.mu = Tensor(p.mu.shape(), 0.0);
    p.log_var = Tensor(p.log_var.shape(), -50.0);
  }
  StudentValueOut out = student_forward(m, map_weights(m), tiny_batch(3, 2));
  CHECK(out.p.all_finite());
  // all-zero weights and biases: predictor output is 0, the eps guard maps it to 0
  for (size_t i = 0; i < out.p.size(); ++i) CHECK(out.p[i] == 0.0);

  // nonzero final bias: p becomes that bias direction, unit norm
  m.find_param("predictor.1.b")->mu = Tensor(Shape{4}, {3.0, 0.0, 0.0, 0.0});
  out = student_forward(m, map_weights(m), tiny_batch(3, 2));
  CHECK(out.p[0] == doctest::Approx(1.0));
  CHECK(out.p[1] == doctest::Approx(0.0));
}

TEST_CASE("tape path and value path agree bitwise for the same seed") {
  Model m = Model::build(ModelKind::Byov, tiny_spec(), 7);
  Tensor x = tiny_batch(2, 3);
  Tape tape;
  auto bound = bind_model(tape, m, 42, true);
  StudentTapeOut tout = student_forward(tape, m, bound, x);
  StudentValueOut vout = student_forward(m, sampled_weights(m, 42), x);
  for (size_t i = 0; i < vout.p.size(); ++i) CHECK(tout.p.value()[i] == vout.p[i]);
  for (size_t i = 0; i < vout.h.size(); ++i) CHECK(tout.h.value()[i] == vout.h[i]);
}

TEST_CASE("bayesian_scope: point-estimate layers are seed-independent") {
  NetworkSpec s = tiny_spec();
  s.patch_conv = true;
  s.patch_size = 2;
  s.patch_embed_dim = 3;
  s.scope = BayesianScope::LinearOnly;
  Model m = Model::build(ModelKind::Byov, s, 11);
  CHECK_FALSE(m.find_param("patch.w")->bayesian);
  CHECK_FALSE(m.find_param("encoder.0.ln.g")->bayesian);
  CHECK(m.find_param("encoder.0.w")->bayesian);

  s.scope = BayesianScope::NoConv;
  Model m2 = Model::build(ModelKind::Byov, s, 11);
  CHECK_FALSE(m2.find_param("patch.w")->bayesian);
  CHECK(m2.find_param("encoder.0.ln.g")->bayesian);

  // point-estimate layers sample to mu for any seed
  auto w1 = sampled_weights(m, 1);
  auto w2 = sampled_weights(m, 2);
  const VariationalParam& patch = *m.find_param("patch.w");
  for (size_t i = 0; i < m.params.size(); ++i) {
    if (m.params[i].layer_id != "patch.w") continue;
    for (size_t j = 0; j < patch.size(); ++j) {
      CHECK(w1[i][j] == patch.mu[j]);
      CHECK(w2[i][j] == patch.mu[j]);
    }
  }
}

TEST_CASE("fully Bayesian outputs differ across seeds") {
  Model m = Model::build(ModelKind::Byov, tiny_spec(), 5, /*init_log_var=*/-4.0);
  Tensor x = tiny_batch(2, 9);
  size_t distinct = 0;
  for (uint64_t s = 0; s < 10; ++s) {
    StudentValueOut a = student_forward(m, sampled_weights(m, 100 + 2 * s), x);
    StudentValueOut b = student_forward(m, sampled_weights(m, 101 + 2 * s), x);
    bool differ = false;
    for (size_t i = 0; i < a.p.size(); ++i) differ = differ || a.p[i] != b.p[i];
    if (differ) ++distinct;
  }
  CHECK(distinct == 10);
}

TEST_CASE("teacher_forward is deterministic and matches the student MAP at tau=0") {
  Model m = Model::build(ModelKind::Byov, tiny_spec(), 13);
  TeacherState t = make_teacher(m, 0.0);
  Tensor x = tiny_batch(3, 17);
  Tensor z1 = teacher_forward(m, t, x);
  Tensor z2 = teacher_forward(m, t, x);
  for (size_t i = 0; i < z1.size(); ++i) CHECK(z1[i] == z2[i]);

  // perturb the student, update with tau=0: teacher == student MAP
  m.find_param("encoder.0.w")->mu[0] += 0.25;
  update_teacher(t, m);
  Tensor zt = teacher_forward(m, t, x);
  StudentValueOut sv = student_forward(m, map_weights(m), x);
  for (size_t i = 0; i < zt.size(); ++i) CHECK(zt[i] == sv.z[i]);
}

TEST_CASE("update_teacher degenerate taus and geometric convergence") {
  Model m = Model::build(ModelKind::Byov, tiny_spec(), 19);
  TeacherState t1 = make_teacher(m, 1.0);
  const Tensor before = t1.weights[m.teacher_tracked[0]];
  m.params[m.teacher_tracked[0]].mu[0] += 1.0;
  update_teacher(t1, m);
  CHECK(t1.weights[m.teacher_tracked[0]][0] == before[0]);  // tau=1: frozen

  TeacherState t0 = make_teacher(m, 0.0);
  m.params[m.teacher_tracked[0]].mu[0] += 0.5;
  update_teacher(t0, m);
  CHECK(t0.weights[m.teacher_tracked[0]][0] == m.params[m.teacher_tracked[0]].mu[0]);

  // tau=0.99, constant student: gap scales by 0.99^t
  const double tau = 0.99;
  TeacherState tg = make_teacher(m, tau);
  const size_t pi = m.teacher_tracked[0];
  tg.weights[pi][0] = 5.0;  // artificial gap
  const double mu = m.params[pi].mu[0];
  const double gap0 = 5.0 - mu;
  for (int k = 0; k < 100; ++k) update_teacher(tg, m);
  const double expect = mu + std::pow(tau, 100) * gap0;
  CHECK(std::fabs(tg.weights[pi][0] - expect) < 1e-10);
}

TEST_CASE("byol_loss trivial geometries") {
  Tape tape;
  // identical directions -> 0
  Tensor p(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
  Var pv = l2_normalize_lastaxis(tape.param(p));
  // the 1e-12 norm guard leaves an O(1e-12) residual at perfect alignment
  CHECK(std::fabs(byol_loss(tape, pv, p, pv, p).value().item()) < 1e-10);

  // orthogonal -> 2 + 2 = 4
  Tensor q(Shape{2, 2}, {0.0, 1.0, 1.0, 0.0});
  CHECK(byol_loss(tape, pv, q, pv, q).value().item() == doctest::Approx(4.0));

  // anti-aligned -> 8
  Tensor r(Shape{2, 2}, {-1.0, 0.0, 0.0, -1.0});
  CHECK(byol_loss(tape, pv, r, pv, r).value().item() == doctest::Approx(8.0));
}

TEST_CASE("byol_loss symmetry and bounds on random inputs") {
  RngStream rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p1 = l2_normalize_lastaxis(byov::testing::random_tensor({4, 6}, 100 + trial));
    Tensor p2 = l2_normalize_lastaxis(byov::testing::random_tensor({4, 6}, 200 + trial));
    Tensor z1 = byov::testing::random_tensor({4, 6}, 300 + trial);
    Tensor z2 = byov::testing::random_tensor({4, 6}, 400 + trial);
    const double l12 = byol_loss_value(p1, z2, p2, z1);
    const double l21 = byol_loss_value(p2, z1, p1, z2);
    CHECK(l12 == doctest::Approx(l21).epsilon(1e-12));
    CHECK(l12 >= 0.0);
    CHECK(l12 <= 8.0);
  }
}

TEST_CASE("byol_loss handles zero-norm teacher rows without NaN") {
  Tensor p(Shape{1, 3}, {1.0, 0.0, 0.0});
  Tensor z(Shape{1, 3}, 0.0);
  const double l = byol_loss_value(p, z, p, z);
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(4.0));  // cos against the zero vector is 0
}

TEST_CASE("stop-gradient: loss reaches student params only; teacher never changes") {
  Model m = Model::build(ModelKind::Byov, tiny_spec(), 29, -4.0);
  TeacherState t = make_teacher(m, 0.5);
  const Tensor teacher_before = t.weights[m.teacher_tracked[0]];
  Tensor x1 = tiny_batch(2, 31), x2 = tiny_batch(2, 37);

  Tape tape;
  auto bound = bind_model(tape, m, 3, true);
  StudentTapeOut s1 = student_forward(tape, m, bound, x1);
  StudentTapeOut s2 = student_forward(tape, m, bound, x2);
  Tensor z1t = teacher_forward(m, t, x1);
  Tensor z2t = teacher_forward(m, t, x2);
  Var loss = byol_loss(tape, s1.p, z2t, s2.p, z1t);
  tape.backward(loss);

  bool any_student_grad = false;
  for (size_t i = 0; i < m.params.size(); ++i) {
    const Tensor& g = bound[i].mu.grad();
    for (size_t j = 0; j < g.size(); ++j) any_student_grad = any_student_grad || g[j] != 0.0;
  }
  CHECK(any_student_grad);
  const Tensor& after = t.weights[m.teacher_tracked[0]];
  for (size_t i = 0; i < after.size(); ++i) CHECK(after[i] == teacher_before[i]);
}

TEST_CASE("dimension mismatches are reported") {
  Model m = Model::build(ModelKind::Byov, tiny_spec(), 41);
  Tensor wrong = byov::testing::random_tensor({2, 1, 5, 5}, 43);
  CHECK_THROWS_AS(student_forward(m, map_weights(m), wrong), ShapeError);
}

TEST_CASE("supervised model exposes a head instead of projector/predictor") {
  NetworkSpec s = tiny_spec();
  s.num_classes = 3;
  Model m = Model::build(ModelKind::SupervisedBbb, s, 47);
  CHECK(m.find_param("head.w") != nullptr);
  CHECK(m.find_param("projector.0.w") == nullptr);
  Tensor logits = head_logits(m, map_weights(m), tiny_batch(5, 53));
  CHECK(logits.shape() == Shape{5, 3});
}

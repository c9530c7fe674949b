#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "byov/rng.hpp"
#include "byov/tape.hpp"
#include "byov/tensor.hpp"
#include "oracles.hpp"

using namespace byov;
using byov::testing::finite_diff_check;
using byov::testing::random_tensor;

TEST_CASE("matmul shape algebra") {
  Tensor a(Shape{2, 3}, 1.0);
  Tensor b(Shape{3, 4}, 2.0);
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 4});
  CHECK(c[0] == doctest::Approx(6.0));

  CHECK_THROWS_WITH_AS(matmul(Tensor(Shape{2, 3}), Tensor(Shape{4, 5})),
                       "matmul: incompatible shapes [2,3] and [4,5]", ShapeError);
}

TEST_CASE("exp of zero tensor is all ones") {
  Tensor z(Shape{3, 2});
  Tensor e = exp(z);
  for (size_t i = 0; i < e.size(); ++i) CHECK(e[i] == 1.0);
}

TEST_CASE("softmax symmetry") {
  Tensor x(Shape{2}, 0.0);
  Tensor s = softmax(x);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one") {
  Tensor x = random_tensor({7, 5}, 11, 3.0);
  Tensor s = softmax(x);
  for (size_t r = 0; r < 7; ++r) {
    double row = 0.0;
    for (size_t j = 0; j < 5; ++j) row += s[r * 5 + j];
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backward: sum of squares") {
  Tape tape;
  Var x = tape.param(Tensor(Shape{3}, {1.0, 2.0, 3.0}));
  Var loss = sum(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward: cosine similarity of a vector with itself has zero grad") {
  Tape tape;
  Var x = tape.param(Tensor(Shape{4}, {0.3, -1.2, 0.7, 2.0}));
  Var cos = sum_lastaxis(mul(l2_normalize_lastaxis(x), l2_normalize_lastaxis(x)));
  tape.backward(cos);
  for (size_t i = 0; i < 4; ++i) CHECK(std::fabs(x.grad()[i]) < 1e-9);
}

TEST_CASE("backward errors") {
  Tape tape;
  Var x = tape.param(Tensor(Shape{3}, {1.0, 2.0, 3.0}));
  Var y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);

  Tape empty;
  Var unbound;
  CHECK_THROWS_AS(empty.backward(unbound), ValueError);
}

TEST_CASE("backward accumulates across calls until zero_grad") {
  Tape tape;
  Var x = tape.param(Tensor(Shape{2}, {1.0, -2.0}));
  Var loss = sum(mul(x, x));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));  // 2x twice
  tape.zero_grad();
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("gradient linearity in the loss") {
  auto run = [](double a, double b) {
    Tape tape;
    Var x = tape.param(Tensor(Shape{3}, {0.5, -0.3, 1.1}));
    Var f = sum(mul(x, x));
    Var g = sum(exp(x));
    Var loss = add(mul(f, a), mul(g, b));
    tape.backward(loss);
    return x.grad();
  };
  Tensor gf = run(1.0, 0.0);
  Tensor gg = run(0.0, 1.0);
  Tensor gmix = run(2.0, -3.0);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(gmix[i] == doctest::Approx(2.0 * gf[i] - 3.0 * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("finite differences: every primitive") {
  auto check = [](const char* name, byov::testing::GraphBuilder b, std::vector<Tensor> params) {
    auto res = finite_diff_check(b, std::move(params));
    INFO(name << " max rel err " << res.max_rel_err);
    CHECK(res.max_rel_err < 1e-4);
  };

  check("matmul", [](Tape&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); },
        {random_tensor({3, 4}, 1), random_tensor({4, 2}, 2)});
  check("matmul batched",
        [](Tape&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); },
        {random_tensor({2, 3, 4}, 3), random_tensor({4, 5}, 4)});
  check("add/sub/mul",
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(sub(add(v[0], v[1]), mul(v[0], v[1])), v[1]));
        },
        {random_tensor({5}, 5), random_tensor({5}, 6)});
  check("scalar broadcast",
        [](Tape&, const std::vector<Var>& v) { return sum(add(mul(v[0], 3.5), -1.25)); },
        {random_tensor({4, 3}, 7)});
  check("add_rowvec",
        [](Tape&, const std::vector<Var>& v) { return sum(mul(add_rowvec(v[0], v[1]), add_rowvec(v[0], v[1]))); },
        {random_tensor({4, 3}, 8), random_tensor({3}, 9)});
  check("exp", [](Tape&, const std::vector<Var>& v) { return sum(exp(v[0])); },
        {random_tensor({6}, 10, 0.5)});
  check("log", [](Tape&, const std::vector<Var>& v) { return sum(log(exp(v[0]))); },
        {random_tensor({6}, 11)});
  check("tanh", [](Tape&, const std::vector<Var>& v) { return sum(tanh(v[0])); },
        {random_tensor({6}, 12)});
  check("relu", [](Tape&, const std::vector<Var>& v) { return sum(mul(relu(v[0]), relu(v[0]))); },
        {random_tensor({16}, 13)});
  check("mean", [](Tape&, const std::vector<Var>& v) { return mean(mul(v[0], v[0])); },
        {random_tensor({7}, 14)});
  check("sum_lastaxis",
        [](Tape&, const std::vector<Var>& v) { return sum(mul(sum_lastaxis(v[0]), sum_lastaxis(v[0]))); },
        {random_tensor({3, 4}, 15)});
  check("l2norm_lastaxis",
        [](Tape&, const std::vector<Var>& v) { return sum(l2norm_lastaxis(v[0])); },
        {random_tensor({3, 4}, 16)});
  check("l2_normalize",
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(l2_normalize_lastaxis(v[0]), v[1]));
        },
        {random_tensor({3, 4}, 17), random_tensor({3, 4}, 18)});
  check("softmax",
        [](Tape&, const std::vector<Var>& v) { return sum(mul(softmax(v[0]), v[1])); },
        {random_tensor({3, 5}, 19), random_tensor({3, 5}, 20)});
  check("log_softmax",
        [](Tape&, const std::vector<Var>& v) { return sum(mul(log_softmax(v[0]), v[1])); },
        {random_tensor({3, 5}, 21), random_tensor({3, 5}, 22)});
  check("layer_norm",
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(layer_norm(v[0], v[1], v[2]), v[3]));
        },
        {random_tensor({4, 6}, 23), random_tensor({6}, 24), random_tensor({6}, 25),
         random_tensor({4, 6}, 26)});
  check("reshape",
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(reshape(v[0], {6, 2}), reshape(v[1], {6, 2})));
        },
        {random_tensor({3, 4}, 27), random_tensor({12}, 28)});
  check("patches",
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(patches(v[0], 2, 2), patches(v[0], 2, 2)));
        },
        {random_tensor({2, 1, 4, 4}, 29)});
}

TEST_CASE("finite differences: random 5-layer MLP") {
  const std::vector<size_t> dims = {6, 8, 8, 8, 8, 4};
  std::vector<Tensor> params;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    params.push_back(random_tensor({dims[l], dims[l + 1]}, 100 + 2 * l, 0.4));
    params.push_back(random_tensor({dims[l + 1]}, 101 + 2 * l, 0.1));
  }
  Tensor input = random_tensor({3, 6}, 999);

  auto build = [&input, &dims](Tape& t, const std::vector<Var>& v) {
    Var h = t.constant(input);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      h = add_rowvec(matmul(h, v[2 * l]), v[2 * l + 1]);
      if (l + 2 < dims.size()) h = tanh(h);
    }
    return mean(mul(h, h));
  };
  auto res = finite_diff_check(build, params);
  INFO("checked " << res.checked << " coords, max rel err " << res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("determinism: identical seeds give bit-identical forward and backward") {
  auto run = [] {
    Tape tape;
    Var w = tape.param(random_tensor({8, 8}, 42, 0.3));
    Var x = tape.constant(random_tensor({4, 8}, 43));
    Var loss = mean(mul(softmax(matmul(x, w)), matmul(x, w)));
    tape.backward(loss);
    return std::make_pair(loss.value().item(), w.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("tensor construction validates shape and finiteness") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2}, {1.0, std::nan("")}), ValueError);
  CHECK_THROWS_AS(log(Tensor(Shape{1}, {-1.0})), ValueError);
}

TEST_CASE("tape reports first non-finite node") {
  Tape tape;
  Var x = tape.param(Tensor(Shape{2}, {800.0, 800.0}));
  Var e = exp(x);  // overflows
  (void)e;
  auto bad = tape.first_nonfinite();
  REQUIRE(bad.has_value());
  CHECK(bad->first == "exp");
}

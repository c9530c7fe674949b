#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>

#include "byov/checkpoint.hpp"
#include "byov/rng.hpp"
#include "byov/variational.hpp"
#include "oracles.hpp"

using namespace byov;

namespace {

VariationalParam test_param(Shape shape, double mu_val, double log_var_val) {
  VariationalParam p;
  p.layer_id = "test";
  p.mu = Tensor(shape, mu_val);
  p.log_var = Tensor(std::move(shape), log_var_val);
  return p;
}

// MC estimate of KL(q||p) for scalar Gaussians: E_q[log q(w) - log p(w)].
double kl_mc_oracle(double mu_q, double var_q, double mu_p, double var_p, size_t draws,
                    uint64_t key) {
  CounterRng rng(key);
  const double sd = std::sqrt(var_q);
  double acc = 0.0;
  for (size_t i = 0; i < draws; ++i) {
    const double w = mu_q + sd * rng.normal(i);
    const double lq = -0.5 * std::log(2.0 * 3.141592653589793 * var_q) -
                      (w - mu_q) * (w - mu_q) / (2.0 * var_q);
    const double lp = -0.5 * std::log(2.0 * 3.141592653589793 * var_p) -
                      (w - mu_p) * (w - mu_p) / (2.0 * var_p);
    acc += lq - lp;
  }
  return acc / static_cast<double>(draws);
}

}  // namespace

TEST_CASE("sample: zero-variance limit returns mu") {
  VariationalParam p = test_param({16}, 0.37, -50.0);
  Tensor w = sample_weights(p, 123);
  for (size_t i = 0; i < w.size(); ++i) CHECK(std::fabs(w[i] - 0.37) < 1e-10);
}

TEST_CASE("sample: point estimate returns mu bitwise") {
  VariationalParam p = test_param({8}, -1.25, 0.0);
  p.bayesian = false;
  Tensor w = sample_weights(p, 99);
  for (size_t i = 0; i < w.size(); ++i) CHECK(w[i] == p.mu[i]);
  // exact idempotence with map_weights
  const Tensor& m = map_weights(p);
  for (size_t i = 0; i < w.size(); ++i) CHECK(w[i] == m[i]);
}

TEST_CASE("sample: reproducible under seed, distinct across seeds") {
  VariationalParam p = test_param({32}, 0.0, 0.0);
  Tensor a = sample_weights(p, 7);
  Tensor b = sample_weights(p, 7);
  Tensor c = sample_weights(p, 8);
  bool differ = false;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
    differ = differ || a[i] != c[i];
  }
  CHECK(differ);
}

TEST_CASE("sample: standard-normal statistics over 1e5 draws") {
  VariationalParam p = test_param({4}, 0.0, 0.0);
  const size_t draws = 100000;
  std::vector<double> sum(4, 0.0), sumsq(4, 0.0);
  for (size_t k = 0; k < draws; ++k) {
    Tensor w = sample_weights(p, 1000 + k);
    for (size_t i = 0; i < 4; ++i) {
      sum[i] += w[i];
      sumsq[i] += w[i] * w[i];
    }
  }
  for (size_t i = 0; i < 4; ++i) {
    const double m = sum[i] / draws;
    const double v = sumsq[i] / draws - m * m;
    CHECK(m >= -0.02);
    CHECK(m <= 0.02);
    CHECK(v >= 0.98);
    CHECK(v <= 1.02);
  }
}

TEST_CASE("kl: identical distributions give zero") {
  VariationalParam p = test_param({10}, 0.0, 0.0);
  const double kl = kl_diag_gaussian_value(p, Tensor(Shape{10}, 0.0), Tensor(Shape{10}, 1.0));
  CHECK(kl == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("kl: q=N(1,1) vs p=N(0,1) is 0.5 per coordinate") {
  const size_t n = 6;
  VariationalParam p = test_param({n}, 1.0, 0.0);
  const double kl = kl_diag_gaussian_value(p, Tensor(Shape{n}, 0.0), Tensor(Shape{n}, 1.0));
  CHECK(std::fabs(kl - 0.5 * n) < 1e-12);
}

TEST_CASE("kl: closed form matches MC oracle within 1%") {
  RngStream rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    const double mu_q = rng.normal(), mu_p = rng.normal();
    const double var_q = std::exp(rng.normal() * 0.5), var_p = std::exp(rng.normal() * 0.5);
    VariationalParam p = test_param({1}, mu_q, std::log(var_q));
    const double closed =
        kl_diag_gaussian_value(p, Tensor(Shape{1}, mu_p), Tensor(Shape{1}, var_p));
    const double mc = kl_mc_oracle(mu_q, var_q, mu_p, var_p, 1000000, 55 + trial);
    CHECK(std::fabs(closed - mc) <= 0.01 * std::max(std::fabs(closed), 0.05));
  }
}

TEST_CASE("kl: non-negative on random pairs") {
  RngStream rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    VariationalParam p = test_param({3}, rng.normal(), rng.normal() * 0.8);
    Tensor mu_p(Shape{3}, rng.normal());
    Tensor var_p(Shape{3}, std::exp(rng.normal() * 0.8));
    CHECK(kl_diag_gaussian_value(p, mu_p, var_p) >= 0.0);
  }
}

TEST_CASE("kl: gradient matches finite differences tightly") {
  Tensor prior_mu = byov::testing::random_tensor({5}, 3);
  Tensor prior_var(Shape{5});
  RngStream rng(4);
  for (size_t i = 0; i < 5; ++i) prior_var[i] = std::exp(0.5 * rng.normal());

  auto build = [&](Tape& t, const std::vector<Var>& v) {
    BoundParam b;
    b.mu = v[0];
    b.log_var = v[1];
    return kl_diag_gaussian(t, b, prior_mu, prior_var);
  };
  auto res = byov::testing::finite_diff_check(
      build, {byov::testing::random_tensor({5}, 5), byov::testing::random_tensor({5}, 6, 0.5)});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("kl: shape mismatch with prior raises") {
  VariationalParam p = test_param({4}, 0.0, 0.0);
  CHECK_THROWS_AS(kl_diag_gaussian_value(p, Tensor(Shape{5}, 0.0), Tensor(Shape{5}, 1.0)),
                  ShapeError);
}

TEST_CASE("map equals the large-K limit of sample means") {
  VariationalParam p = test_param({3}, 0.0, 0.0);
  p.mu = Tensor(Shape{3}, {0.4, -1.1, 2.3});
  const size_t draws = 100000;
  std::vector<double> acc(3, 0.0);
  for (size_t k = 0; k < draws; ++k) {
    Tensor w = sample_weights(p, k);
    for (size_t i = 0; i < 3; ++i) acc[i] += w[i];
  }
  const double se = 1.0 / std::sqrt(static_cast<double>(draws));  // sigma = 1
  for (size_t i = 0; i < 3; ++i) {
    CHECK(std::fabs(acc[i] / draws - p.mu[i]) < 3.0 * se);
  }
}

TEST_CASE("snr basics") {
  VariationalParam p = test_param({1}, 2.0, 2.0 * std::log(0.5));
  CHECK(snr(p)[0] == doctest::Approx(4.0));

  VariationalParam z = test_param({1}, 0.0, 1.3);
  CHECK(snr(z)[0] == 0.0);

  VariationalParam det = test_param({1}, 1.0, 0.0);
  det.bayesian = false;
  CHECK_THROWS_AS(snr(det), ValueError);
}

TEST_CASE("snr under the reference init: median matches direct computation") {
  VariationalParam p = make_param("big", {1000000}, 31337, ParamInit::TruncNormal, -10.0, true);
  Tensor s = snr(p);
  std::vector<double> snr_vals(s.data(), s.data() + s.size());
  std::vector<double> mu_abs(p.mu.size());
  for (size_t i = 0; i < p.mu.size(); ++i) mu_abs[i] = std::fabs(p.mu[i]);
  auto median = [](std::vector<double>& v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  const double med_snr = median(snr_vals);
  const double med_mu = median(mu_abs);
  CHECK(med_snr == doctest::Approx(med_mu / std::exp(-5.0)).epsilon(1e-9));
  // trunc-normal(0.02) median |mu| is about 0.675 * 0.02 (slightly less with the cut)
  CHECK(med_snr > 0.6 * 0.02 / std::exp(-5.0));
  CHECK(med_snr < 0.7 * 0.02 / std::exp(-5.0));
}

TEST_CASE("layer_stats") {
  VariationalParam c = test_param({7}, 1.0, -4.0);
  LayerStats cs = layer_stats(c);
  CHECK(cs.mean_sigma == doctest::Approx(cs.max_sigma));

  VariationalParam ref = test_param({100}, 0.1, -10.0);
  CHECK(layer_stats(ref).mean_sigma == doctest::Approx(6.7379469990e-3).epsilon(1e-6));

  VariationalParam hand;
  hand.layer_id = "hand";
  hand.mu = Tensor(Shape{4}, {1.0, -2.0, 0.5, 0.0});
  hand.log_var = Tensor(Shape{4}, {0.0, -2.0, 2.0, 0.0});
  LayerStats hs = layer_stats(hand);
  double sig[4], ratio[4];
  for (int i = 0; i < 4; ++i) {
    sig[i] = std::exp(0.5 * hand.log_var[i]);
    ratio[i] = std::fabs(hand.mu[i]) / sig[i];
  }
  CHECK(hs.mean_sigma == doctest::Approx((sig[0] + sig[1] + sig[2] + sig[3]) / 4.0));
  CHECK(hs.max_sigma == doctest::Approx(*std::max_element(sig, sig + 4)));
  CHECK(hs.mean_snr == doctest::Approx((ratio[0] + ratio[1] + ratio[2] + ratio[3]) / 4.0));
  CHECK(hs.max_snr == doctest::Approx(*std::max_element(ratio, ratio + 4)));
}

TEST_CASE("reparameterization: dE[w]/dmu is exactly one per draw") {
  VariationalParam p = test_param({1}, 0.3, -1.0);
  Tape tape;
  BoundParam b = bind_param(tape, p, 5, true);
  tape.backward(sum(b.weights));
  CHECK(b.mu.grad()[0] == 1.0);
}

TEST_CASE("reparameterization: single-draw gradient of a quadratic is unbiased") {
  const double mu = 0.7, log_var = -0.6;
  const double sigma = std::exp(0.5 * log_var);
  const size_t draws = 10000;
  double acc = 0.0;
  for (size_t k = 0; k < draws; ++k) {
    VariationalParam p = test_param({1}, mu, log_var);
    Tape tape;
    BoundParam b = bind_param(tape, p, 9000 + k, true);
    tape.backward(sum(mul(b.weights, b.weights)));
    acc += b.mu.grad()[0];  // d(w^2)/dmu = 2w
  }
  const double mean_grad = acc / draws;
  const double se = 2.0 * sigma / std::sqrt(static_cast<double>(draws));
  CHECK(std::fabs(mean_grad - 2.0 * mu) < 3.0 * se);
}

TEST_CASE("checkpoint store round-trips bit-exactly") {
  TensorStore store;
  store.put("a/mu", byov::testing::random_tensor({3, 4}, 1));
  store.put("deeply/nested/name with spaces", byov::testing::random_tensor({7}, 2, 1e-300));
  store.put_scalar("meta/step", 42.0);
  const std::string path = "/tmp/byov_test_store.byov";
  save_store(store, path);
  TensorStore loaded = load_store(path);
  REQUIRE(loaded.items().size() == 3);
  for (const auto& [name, t] : store.items()) {
    const Tensor& l = loaded.get(name);
    REQUIRE(l.shape() == t.shape());
    for (size_t i = 0; i < t.size(); ++i) CHECK(l[i] == t[i]);
  }
  CHECK_THROWS_AS(loaded.get("missing"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects bad magic") {
  const std::string path = "/tmp/byov_bad_magic.byov";
  FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("NOPE", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_store(path), IoError);
  std::remove(path.c_str());
}

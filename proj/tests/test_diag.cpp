#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rfo/diag.hpp"

#include <cmath>
#include <random>

using namespace rfo;

namespace {

std::vector<std::pair<Vec, Vec>> random_pairs(int n, int obs_dim, int act_dim,
                                              std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<std::pair<Vec, Vec>> pairs;
  for (int i = 0; i < n; ++i) {
    Vec s(obs_dim), a(act_dim);
    for (int k = 0; k < obs_dim; ++k) s(k) = g(rng);
    for (int k = 0; k < act_dim; ++k) a(k) = std::tanh(g(rng));
    pairs.push_back({s, a});
  }
  return pairs;
}

}  // namespace

TEST_CASE("k3 has the expected closed-form values") {
  // k3(rho) = (rho - 1) - ln rho. For identical policies rho = 1 and the
  // estimate is exactly zero; the helper below checks a nontrivial point
  // by constructing two constant-output fields with known losses.
  std::mt19937_64 rng(1);
  MlpParams base = mlp_init({2 + 1 + 3, 2, {8}}, rng);
  PolicySnapshot snap{base};
  auto pairs = random_pairs(16, 3, 2, rng);
  std::mt19937_64 kl_rng(2);
  KlEstimate self = kl_estimate(snap, snap, pairs, {64, true}, kl_rng);
  CHECK(self.value == 0.0);  // exact under common random numbers
  CHECK_FALSE(self.exponent_clamped);
}

TEST_CASE("k3 is nonnegative over a large ratio sweep") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  double min_k3 = 1e300;
  for (int i = 0; i < 100000; ++i) {
    double log_rho = 3.0 * g(rng);
    double rho = std::exp(log_rho);
    double k3 = (rho - 1.0) - log_rho;
    min_k3 = std::min(min_k3, k3);
  }
  CHECK(min_k3 >= 0.0);
}

TEST_CASE("kl estimate between distinct policies is positive and finite") {
  std::mt19937_64 rng(4);
  MlpParams a = mlp_init({1 + 1 + 2, 1, {8}}, rng);
  MlpParams b = a;
  // nudge one tensor so the policies differ slightly
  b.ps.at("out.b").array() += 0.05;
  auto pairs = random_pairs(32, 2, 1, rng);
  std::mt19937_64 kl_rng(5);
  KlEstimate kl = kl_estimate({a}, {b}, pairs, {256, true}, kl_rng);
  CHECK(kl.value > 0.0);
  CHECK(std::isfinite(kl.value));
  CHECK(kl.value < 10.0);
}

TEST_CASE("common random numbers reduce estimator noise") {
  std::mt19937_64 rng(6);
  MlpParams a = mlp_init({1 + 1 + 2, 1, {8}}, rng);
  MlpParams b = a;
  b.ps.at("out.b").array() += 0.01;
  auto pairs = random_pairs(16, 2, 1, rng);

  auto spread = [&](bool crn) {
    double lo = 1e300, hi = -1e300;
    for (int rep = 0; rep < 10; ++rep) {
      std::mt19937_64 r(100 + rep);
      double v = kl_estimate({a}, {b}, pairs, {128, crn}, r).value;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    return hi - lo;
  };
  CHECK(spread(true) < spread(false));
}

TEST_CASE("exponent clamping flags extreme ratios") {
  std::mt19937_64 rng(7);
  MlpParams a = mlp_init({1 + 1 + 1, 1, {4}}, rng);
  MlpParams b = a;
  // push the new policy's field far away so |L_old - L_new| blows past 30
  b.ps.at("out.b").array() += 100.0;
  auto pairs = random_pairs(4, 1, 1, rng);
  std::mt19937_64 kl_rng(8);
  KlEstimate kl = kl_estimate({a}, {b}, pairs, {64, true}, kl_rng);
  CHECK(kl.exponent_clamped);
  CHECK(std::isfinite(kl.value));
}

TEST_CASE("pointwise loss is zero for a perfectly matched field") {
  // vf(psi, u | s) must output a - eps; that target depends on the draw,
  // so no constant net can be exact. Instead check the analytic optimum:
  // for a single fixed draw the batch of one has a known residual.
  std::mt19937_64 rng(9);
  MlpParams vf = mlp_init({1 + 1 + 1, 1, {4}}, rng);
  for (auto& t : vf.ps.tensors)
    if (t.name.ends_with(".W") || t.name.ends_with(".b")) t.value.setZero();
  Vec obs(1), act(1);
  obs << 0.3;
  act << 0.5;
  CfmDraws draws;
  draws.u = Vec::Constant(1, 0.5);
  draws.eps = Mat::Constant(1, 1, 0.5);
  // target = a - eps = 0, field = 0: loss 0
  CHECK(cfm_loss_pointwise(vf, obs, act, draws) == doctest::Approx(0.0));
  draws.eps(0, 0) = -0.5;
  // target = 1, field = 0: loss 1
  CHECK(cfm_loss_pointwise(vf, obs, act, draws) == doctest::Approx(1.0));
}

TEST_CASE("drift monitor ranks a trained field below a random one") {
  std::mt19937_64 rng(10);
  auto pairs = random_pairs(32, 2, 1, rng);

  MlpParams trained = mlp_init({1 + 1 + 2, 1, {16}}, rng);
  AdamWState opt = adamw_init(trained.ps);
  RecentBuffer buf;
  buf.rotate(pairs);
  FlowConfig cfg{4, 3.0, 1};
  std::mt19937_64 train_rng(11);
  for (int iter = 0; iter < 300; ++iter) {
    Tape t;
    BoundMlp b = mlp_bind(t, trained, true);
    Var loss = cfm_loss_past(t, b, cfg, buf, 128, train_rng);
    t.backward(loss);
    adamw_step(trained.ps, mlp_grads(t, b), opt, 2e-3);
  }
  MlpParams random_vf = mlp_init({1 + 1 + 2, 1, {16}}, rng);
  for (auto& t : random_vf.ps.tensors)
    if (t.name.ends_with(".W")) t.value *= 3.0;

  std::mt19937_64 m1(12), m2(12);
  double drift_trained = past_cfm_monitor(trained, pairs, 128, m1);
  double drift_random = past_cfm_monitor(random_vf, pairs, 128, m2);
  CHECK(drift_trained < drift_random);
}

TEST_CASE("empty pair lists are rejected") {
  std::mt19937_64 rng(13);
  MlpParams vf = mlp_init({1 + 1 + 1, 1, {4}}, rng);
  std::vector<std::pair<Vec, Vec>> none;
  std::mt19937_64 r(14);
  CHECK_THROWS_AS(kl_estimate({vf}, {vf}, none, {16, true}, r),
                  std::invalid_argument);
  CHECK_THROWS_AS(past_cfm_monitor(vf, none, 16, r), std::invalid_argument);
  CHECK_THROWS_AS(make_cfm_draws(1, 0, r), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rfo/env.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace rfo;

namespace {
constexpr double kPi = std::numbers::pi;

Mat random_actions(int d, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat a(d, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < d; ++i) a(i, j) = u(rng);
  return a;
}
}  // namespace

TEST_CASE("specs") {
  auto pm = make_env("point-mass-reach");
  CHECK(pm->spec().state_dim == 4);
  CHECK(pm->spec().obs_dim == 4);
  CHECK(pm->spec().act_dim == 2);
  CHECK(pm->spec().episode_len == 100);
  CHECK(pm->spec().dt == 0.05);
  auto di = make_env("double-integrator");
  CHECK(di->spec().state_dim == 2);
  CHECK(di->spec().act_dim == 1);
  auto pend = make_env("pendulum-swingup");
  CHECK(pend->spec().state_dim == 2);
  CHECK(pend->spec().obs_dim == 3);
  CHECK(pend->spec().act_dim == 1);
  CHECK_THROWS_AS(make_env("cartpole"), std::invalid_argument);
  CHECK_THROWS_AS(make_env("point-mass-reach", 0), std::invalid_argument);
}

TEST_CASE("initial state distributions") {
  std::mt19937_64 rng(4);
  auto pm = make_env("point-mass-reach");
  Mat s = pm->sample_initial(256, rng);
  CHECK(s.topRows(2).array().abs().maxCoeff() <= 1.0);
  CHECK(s.bottomRows(2).isZero());
  CHECK(s.topRows(2).array().abs().maxCoeff() > 0.5);  // actually random

  // Pendulum resets near the hanging rest state.
  auto pend = make_env("pendulum-swingup");
  Mat sp = pend->sample_initial(256, rng);
  CHECK(sp.row(0).array().abs().maxCoeff() <= 0.05);
  CHECK(sp.row(1).array().abs().maxCoeff() <= 0.05);
  CHECK(sp.row(0).array().abs().maxCoeff() > 0.01);  // actually random

  std::mt19937_64 r1(9), r2(9);
  CHECK(pm->sample_initial(8, r1) == pm->sample_initial(8, r2));
}

TEST_CASE("point-mass hand step") {
  auto env = make_env("point-mass-reach");
  Tape t;
  Mat s(4, 1);
  s << 0.5, -0.25, 0.1, 0.0;
  Mat a(2, 1);
  a << 1.0, -0.5;
  auto [next, reward] = env->dynamics(t, t.constant(s), t.constant(a));
  const Mat& ns = t.value(next);
  CHECK(ns(0, 0) == doctest::Approx(0.5 + 0.05 * 0.1));
  CHECK(ns(1, 0) == doctest::Approx(-0.25));
  CHECK(ns(2, 0) == doctest::Approx(0.1 + 0.1 * 1.0));
  CHECK(ns(3, 0) == doctest::Approx(-0.05));
  double expected_r = -(ns(0, 0) * ns(0, 0) + ns(1, 0) * ns(1, 0)) -
                      0.01 * (1.0 + 0.25);
  CHECK(t.value(reward)(0, 0) == doctest::Approx(expected_r));
}

TEST_CASE("pendulum hand step from hanging with max torque") {
  auto env = make_env("pendulum-swingup");
  Tape t;
  Mat s = Mat::Zero(2, 1);
  Mat a = Mat::Constant(1, 1, 1.0);
  auto [next, reward] = env->dynamics(t, t.constant(s), t.constant(a));
  // accel = 4, omega' = 0.2, theta' = 0.01
  CHECK(t.value(next)(1, 0) == doctest::Approx(0.2));
  CHECK(t.value(next)(0, 0) == doctest::Approx(0.01));
  double to_up = 0.01 - kPi;  // wrap(0.01 + pi)
  double expected_r = -to_up * to_up - 0.1 * 0.04 - 0.001;
  CHECK(t.value(reward)(0, 0) == doctest::Approx(expected_r));
}

TEST_CASE("pendulum observation") {
  auto env = make_env("pendulum-swingup");
  Tape t;
  Mat s(2, 2);
  s << 0.3, -2.0, 1.5, 0.25;
  Mat o = t.value(env->observe(t, t.constant(s)));
  CHECK(o.rows() == 3);
  CHECK(o(0, 0) == doctest::Approx(std::cos(0.3)));
  CHECK(o(1, 1) == doctest::Approx(std::sin(-2.0)));
  CHECK(o(2, 0) == 1.5);
}

TEST_CASE("dynamics jacobians match central differences") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> gauss;
  for (const char* name :
       {"point-mass-reach", "double-integrator", "pendulum-swingup"}) {
    auto env = make_env(name);
    int sd = env->spec().state_dim, ad = env->spec().act_dim;
    Mat w = Mat::NullaryExpr(1, sd, [&](long, long j) { return std::cos(1.0 + j); });

    for (int trial = 0; trial < 10; ++trial) {
      Mat s(sd, 1), a(ad, 1);
      for (int i = 0; i < sd; ++i) s(i, 0) = 0.5 * gauss(rng);
      for (int i = 0; i < ad; ++i) a(i, 0) = 0.7 * std::tanh(gauss(rng));

      auto through_state = [&](Tape& t, Var x) {
        auto [next, reward] = env->dynamics(t, x, t.constant(a));
        return t.matmul(t.constant(w), next) + 3.0 * reward;
      };
      auto through_action = [&](Tape& t, Var x) {
        auto [next, reward] = env->dynamics(t, t.constant(s), x);
        return t.matmul(t.constant(w), next) + 3.0 * reward;
      };
      INFO(std::string(name));
      CHECK(grad_check(through_state, s, 1e-6) < 1e-5);
      CHECK(grad_check(through_action, a, 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("wrap_angle maps into (-pi, pi] with unit gradient") {
  Tape t;
  Mat x(1, 4);
  x << 0.5, kPi + 0.1, -kPi - 0.1, 7.0;
  Var v = t.leaf(x);
  Var w = wrap_angle(t, v);
  const Mat& wx = t.value(w);
  CHECK(wx(0, 0) == doctest::Approx(0.5));
  CHECK(wx(0, 1) == doctest::Approx(0.1 - kPi));
  CHECK(wx(0, 2) == doctest::Approx(kPi - 0.1));
  CHECK(wx(0, 3) == doctest::Approx(7.0 - 2 * kPi));
  CHECK(wx.array().abs().maxCoeff() <= kPi + 1e-12);
  t.backward(t.sum(w));
  CHECK(t.grad(v) == Mat::Ones(1, 4));
}

TEST_CASE("batched stepping, bounds and episode end") {
  auto env = std::shared_ptr<const Env>(make_env("double-integrator", 3));
  BatchedEnv batch(env, 4);
  std::mt19937_64 rng(2);
  batch.reset_all(rng);
  CHECK(batch.steps_into_episode() == 0);

  Tape t;
  Var s = batch.inject_states(t);
  Var bad = t.constant(Mat::Constant(1, 4, 1.5));
  CHECK_THROWS_AS(batch.step(t, s, bad), std::invalid_argument);

  Var a = t.constant(Mat::Constant(1, 4, 0.5));
  auto r1 = batch.step(t, s, a);
  CHECK_FALSE(r1.done);
  auto r2 = batch.step(t, r1.next_state, a);
  CHECK_FALSE(r2.done);
  auto r3 = batch.step(t, r2.next_state, a);
  CHECK(r3.done);
  batch.commit(t.value(r3.next_state));
  CHECK(batch.states() == t.value(r3.next_state));
}

TEST_CASE("long random rollouts stay finite and bounded") {
  std::mt19937_64 rng(8);
  for (const char* name :
       {"point-mass-reach", "double-integrator", "pendulum-swingup"}) {
    auto env = std::shared_ptr<const Env>(make_env(name));
    BatchedEnv batch(env, 8);
    batch.reset_all(rng);
    Mat states = batch.states();
    Tape t;
    for (int step = 0; step < 300; ++step) {
      t.clear();
      Var s = t.constant(states);
      Var a = t.constant(random_actions(env->spec().act_dim, 8, rng));
      auto res = batch.step(t, s, a);
      states = t.value(res.next_state);
      REQUIRE(states.allFinite());
      REQUIRE(t.value(res.reward).allFinite());
    }
    if (std::string(name) == "pendulum-swingup")
      CHECK(states.row(0).array().abs().maxCoeff() <= kPi + 1e-12);
  }
}

TEST_CASE("welford normalizer matches direct statistics") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> gauss;
  Mat data(3, 500);
  for (long j = 0; j < data.cols(); ++j)
    for (long i = 0; i < 3; ++i) data(i, j) = 2.0 * gauss(rng) + i;

  ObsNormalizer norm;
  norm.init(3);
  for (long j = 0; j < data.cols(); j += 50) norm.update(data.middleCols(j, 50));

  Vec mean = data.rowwise().mean();
  CHECK((norm.mean - mean).norm() < 1e-10);
  Vec var = (data.colwise() - mean).array().square().rowwise().mean();
  Vec inv = (var.array() + 1e-8).sqrt().inverse();
  CHECK((norm.inv_std() - inv).norm() < 1e-8);

  Tape t;
  Mat obs = data.leftCols(4);
  Mat normed = t.value(norm.apply(t, t.constant(obs)));
  Mat expect = (obs.colwise() - mean).array().colwise() * inv.array();
  CHECK((normed - expect).norm() < 1e-10);

  // frozen stops updates, count < 2 applies identity
  norm.frozen = true;
  long long before = norm.count;
  norm.update(data);
  CHECK(norm.count == before);

  ObsNormalizer fresh;
  fresh.init(3);
  Tape t2;
  Var o = t2.constant(obs);
  CHECK(t2.value(fresh.apply(t2, o)) == obs);
}

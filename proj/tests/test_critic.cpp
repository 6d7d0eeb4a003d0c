#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rfo/critic.hpp"

#include <cmath>
#include <random>

using namespace rfo;

namespace {

// Direct lambda-return mixture over n-step returns, split at episode ends.
Mat lambda_mixture_oracle(const Mat& rewards, const Mat& values,
                          const std::vector<bool>& done, double gamma,
                          double lambda) {
  long h = rewards.rows(), n = rewards.cols();
  Mat y(h, n);
  for (long col = 0; col < n; ++col) {
    long start = 0;
    while (start < h) {
      long end = start;  // one past the last reward of this stretch
      while (end < h && !done[end]) ++end;
      bool terminated = end < h;  // ended by done, not truncation
      long T = terminated ? end + 1 : h;
      for (long t = start; t < T; ++t) {
        auto nstep = [&](long steps) {
          double g = 0, disc = 1;
          for (long i = 0; i < steps; ++i) {
            g += disc * rewards(t + i, col);
            disc *= gamma;
          }
          double tail = (t + steps < T || !terminated) ? values(t + steps, col) : 0.0;
          return g + disc * tail;
        };
        long longest = T - t;
        double acc = 0, lp = 1;
        for (long s = 1; s < longest; ++s) {
          acc += (1 - lambda) * lp * nstep(s);
          lp *= lambda;
        }
        acc += lp * nstep(longest);
        y(t, col) = acc;
      }
      start = T;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("lambda 0 reduces to one-step TD targets") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Mat r(5, 3), v(6, 3);
  for (long j = 0; j < 3; ++j) {
    for (int t = 0; t < 5; ++t) r(t, j) = g(rng);
    for (int t = 0; t < 6; ++t) v(t, j) = g(rng);
  }
  std::vector<bool> done(5, false);
  Mat y = td_lambda_targets(r, v, done, 0.9, 0.0);
  for (int t = 0; t < 5; ++t)
    for (long j = 0; j < 3; ++j)
      CHECK(y(t, j) == doctest::Approx(r(t, j) + 0.9 * v(t + 1, j)));
}

TEST_CASE("lambda 1 reduces to discounted returns with terminal bootstrap") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Mat r(4, 2), v(5, 2);
  for (long j = 0; j < 2; ++j) {
    for (int t = 0; t < 4; ++t) r(t, j) = g(rng);
    for (int t = 0; t < 5; ++t) v(t, j) = g(rng);
  }
  std::vector<bool> done(4, false);
  Mat y = td_lambda_targets(r, v, done, 0.95, 1.0);
  for (long j = 0; j < 2; ++j) {
    double expect = v(4, j);
    for (int t = 3; t >= 0; --t) {
      expect = r(t, j) + 0.95 * expect;
      CHECK(y(t, j) == doctest::Approx(expect));
    }
  }
}

TEST_CASE("hand-computed three-step recursion") {
  Mat r(3, 1), v(4, 1);
  r << 1.0, 1.0, 1.0;
  v << 0.5, 0.6, 0.7, 0.8;
  std::vector<bool> done(3, false);
  Mat y = td_lambda_targets(r, v, done, 0.9, 0.8);
  CHECK(y(2, 0) == doctest::Approx(1.72));
  CHECK(y(1, 0) == doctest::Approx(2.3644));
  CHECK(y(0, 0) == doctest::Approx(2.810368));
}

TEST_CASE("done rows truncate bootstrapping") {
  Mat r(3, 1), v(4, 1);
  r << 2.0, -1.0, 0.5;
  v << 9.0, 9.0, 9.0, 9.0;
  std::vector<bool> done{false, true, false};
  Mat y = td_lambda_targets(r, v, done, 0.9, 0.7);
  CHECK(y(1, 0) == -1.0);  // episode end, no tail
  // y_0 mixes V(s_1) and y_1 only
  CHECK(y(0, 0) == doctest::Approx(2.0 + 0.9 * (0.3 * 9.0 + 0.7 * -1.0)));
  // after the reset bootstrapping resumes
  CHECK(y(2, 0) == doctest::Approx(0.5 + 0.9 * 9.0));
}

TEST_CASE("recursion equals the explicit lambda mixture on random segments") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    long h = 1 + static_cast<long>(rng() % 8);
    long n = 1 + static_cast<long>(rng() % 3);
    Mat r(h, n), v(h + 1, n);
    for (long j = 0; j < n; ++j) {
      for (long t = 0; t < h; ++t) r(t, j) = g(rng);
      for (long t = 0; t <= h; ++t) v(t, j) = g(rng);
    }
    std::vector<bool> done(h);
    for (long t = 0; t < h; ++t) done[t] = u01(rng) < 0.25;
    double gamma = u01(rng), lambda = u01(rng);
    Mat got = td_lambda_targets(r, v, done, gamma, lambda);
    Mat want = lambda_mixture_oracle(r, v, done, gamma, lambda);
    worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("input validation") {
  Mat r(3, 2), v(3, 2);
  std::vector<bool> done(3, false);
  CHECK_THROWS_AS(td_lambda_targets(r, v, done, 0.9, 0.9),
                  std::invalid_argument);
  Mat v_ok(4, 2);
  std::vector<bool> short_done(2, false);
  CHECK_THROWS_AS(td_lambda_targets(r, v_ok, short_done, 0.9, 0.9),
                  std::invalid_argument);
}

TEST_CASE("critic value is the average of the two networks") {
  std::mt19937_64 rng(4);
  CriticPair pair = critic_init(3, {8}, rng);
  Mat obs(3, 5);
  std::normal_distribution<double> g;
  for (long j = 0; j < 5; ++j)
    for (int i = 0; i < 3; ++i) obs(i, j) = g(rng);

  Mat avg = critic_values(pair, obs);
  Tape t;
  BoundMlp b1 = mlp_bind(t, pair.first, false);
  Mat v1 = t.value(mlp_forward(t, b1, t.constant(obs)));
  BoundMlp b2 = mlp_bind(t, pair.second, false);
  Mat v2 = t.value(mlp_forward(t, b2, t.constant(obs)));
  CHECK((avg - 0.5 * (v1 + v2)).norm() < 1e-14);
  // independent initializations
  CHECK((v1 - v2).norm() > 1e-6);
}

TEST_CASE("critic fits a simple target function") {
  std::mt19937_64 rng(5);
  CriticPair pair = critic_init(2, {32, 32}, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat obs(2, 256), tgt(1, 256);
  for (long j = 0; j < 256; ++j) {
    obs(0, j) = u(rng);
    obs(1, j) = u(rng);
    tgt(0, j) = obs(0, j) - 0.5 * obs(1, j);
  }
  double loss = 0;
  for (int e = 0; e < 60; ++e)
    loss = critic_update(pair, obs, tgt, 1, 4, 5e-3, rng);
  CHECK(loss < 1e-2);
  Mat pred = critic_values(pair, obs);
  CHECK((pred - tgt).cwiseAbs().mean() < 0.15);
}

TEST_CASE("critic update is deterministic in the rng stream") {
  std::mt19937_64 ia(6), ib(6);
  CriticPair a = critic_init(2, {8}, ia);
  CriticPair b = critic_init(2, {8}, ib);
  Mat obs = Mat::Random(2, 32), tgt = Mat::Random(1, 32);
  std::mt19937_64 ra(7), rb(7);
  double la = critic_update(a, obs, tgt, 2, 4, 1e-3, ra);
  double lb = critic_update(b, obs, tgt, 2, 4, 1e-3, rb);
  CHECK(la == lb);
  for (size_t i = 0; i < a.first.ps.tensors.size(); ++i)
    CHECK(a.first.ps.tensors[i].value == b.first.ps.tensors[i].value);
}

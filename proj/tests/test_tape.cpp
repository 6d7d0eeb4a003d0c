#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rfo/tape.hpp"

#include <cmath>
#include <random>

using namespace rfo;

namespace {

Mat random_mat(long r, long c, std::mt19937_64& rng, double lo = -2.0,
               double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (long j = 0; j < c; ++j)
    for (long i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

}  // namespace

TEST_CASE("basic forward values") {
  Tape t;
  Var x = t.leaf(Mat::Constant(1, 1, 0.0));
  CHECK(t.value(t.tanh_(x))(0, 0) == 0.0);
  CHECK(t.value(t.silu(x))(0, 0) == 0.0);

  Var y = t.leaf(Mat::Constant(1, 1, 3.0));
  Var y2 = t.square(y);
  t.backward(y2);
  CHECK(t.grad(y)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward of constant root leaves params untouched") {
  Tape t;
  Var p = t.leaf(Mat::Constant(2, 1, 1.5));
  Var c = t.constant(4.0);
  t.backward(c);
  CHECK_FALSE(t.has_grad(p));
  CHECK(t.grad(p).isZero());
}

TEST_CASE("sum of two parameters has unit adjoints") {
  Tape t;
  Var a = t.leaf(Mat::Constant(1, 1, 2.0));
  Var b = t.leaf(Mat::Constant(1, 1, -7.0));
  t.backward(t.add(a, b));
  CHECK(t.grad(a)(0, 0) == 1.0);
  CHECK(t.grad(b)(0, 0) == 1.0);
}

TEST_CASE("grad_check on simple functions") {
  auto square_sum = [](Tape& t, Var x) { return t.sum(t.square(x)); };
  CHECK(grad_check(square_sum, Mat::Constant(1, 1, 2.0), 1e-5) < 1e-8);

  auto constant_fn = [](Tape& t, Var) { return t.constant(3.0); };
  CHECK(grad_check(constant_fn, Mat::Constant(3, 1, 1.0), 1e-5) == 0.0);

  std::mt19937_64 rng(7);
  Mat w = random_mat(1, 4, rng);
  auto tanh_linear = [&](Tape& t, Var x) {
    return t.tanh_(t.matmul(t.constant(w), x));
  };
  CHECK(grad_check(tanh_linear, random_mat(4, 1, rng), 1e-5) < 1e-4);
}

TEST_CASE("every primitive matches central differences on random points") {
  std::mt19937_64 rng(42);
  struct Case {
    const char* name;
    std::function<Var(Tape&, Var)> f;
    double lo, hi;
  };
  std::vector<Case> cases = {
      {"square", [](Tape& t, Var x) { return t.sum(t.square(x)); }, -2, 2},
      {"sqrt", [](Tape& t, Var x) { return t.sum(t.sqrt_(x)); }, 0.1, 3},
      {"exp", [](Tape& t, Var x) { return t.sum(t.exp_(x)); }, -2, 2},
      {"log", [](Tape& t, Var x) { return t.sum(t.log_(x)); }, 0.1, 3},
      {"tanh", [](Tape& t, Var x) { return t.sum(t.tanh_(x)); }, -2, 2},
      {"atanh", [](Tape& t, Var x) { return t.sum(t.atanh_(x)); }, -0.9, 0.9},
      {"silu", [](Tape& t, Var x) { return t.sum(t.silu(x)); }, -2, 2},
      {"sin", [](Tape& t, Var x) { return t.sum(t.sin_(x)); }, -3, 3},
      {"cos", [](Tape& t, Var x) { return t.sum(t.cos_(x)); }, -3, 3},
      {"mean", [](Tape& t, Var x) { return t.mean(x); }, -2, 2},
      {"sqnorm", [](Tape& t, Var x) { return t.sqnorm(x); }, -2, 2},
      {"colsq", [](Tape& t, Var x) { return t.sum(t.colwise_sqnorm(x)); }, -2, 2},
      {"layernorm",
       [](Tape& t, Var x) {
         // Weighted sum; a plain sum (or sum of squares) of a standardized
         // matrix is nearly constant and fails finite differences trivially.
         Mat w(4, 3);
         for (long j = 0; j < 3; ++j)
           for (long i = 0; i < 4; ++i) w(i, j) = std::sin(1.0 + i + 7.0 * j);
         return t.sum(t.mul(t.constant(w), t.layernorm(x)));
       },
       -2, 2},
      {"slice",
       [](Tape& t, Var x) { return t.sum(t.square(t.slice_rows(x, 1, 2))); },
       -2, 2},
      {"scale", [](Tape& t, Var x) { return t.sum(t.scale(x, -1.7)); }, -2, 2},
      {"addconst",
       [](Tape& t, Var x) { return t.sum(t.square(t.add_const(x, 0.3))); }, -2,
       2},
  };
  for (const auto& c : cases) {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      Mat x = random_mat(4, 3, rng, c.lo, c.hi);
      worst = std::max(worst, grad_check(c.f, x, 1e-6));
    }
    INFO(std::string(c.name));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("binary primitives and broadcasting match central differences") {
  std::mt19937_64 rng(11);
  Mat other = random_mat(4, 3, rng, 0.5, 2.0);
  Mat col = random_mat(4, 1, rng, 0.5, 2.0);
  struct Case {
    const char* name;
    std::function<Var(Tape&, Var)> f;
  };
  std::vector<Case> cases = {
      {"add", [&](Tape& t, Var x) { return t.sum(t.square(t.add(x, t.constant(other)))); }},
      {"sub", [&](Tape& t, Var x) { return t.sum(t.square(t.sub(t.constant(other), x))); }},
      {"mul", [&](Tape& t, Var x) { return t.sum(t.mul(x, t.constant(other))); }},
      {"div", [&](Tape& t, Var x) { return t.sum(t.div(x, t.constant(other))); }},
      {"div_by_x", [&](Tape& t, Var x) { return t.sum(t.div(t.constant(other), x)); }},
      {"add_colbc", [&](Tape& t, Var x) { return t.sum(t.square(t.add(t.constant(other), x))); }},
      {"mul_colbc", [&](Tape& t, Var x) { return t.sum(t.square(t.mul(t.constant(other), x))); }},
      {"matmul", [&](Tape& t, Var x) { return t.sqnorm(t.matmul(t.constant(other), x)); }},
      {"concat", [&](Tape& t, Var x) {
         std::array<Var, 2> parts{x, t.constant(other)};
         return t.sqnorm(t.concat_rows(parts));
       }},
  };
  for (const auto& c : cases) {
    bool colshape = std::string(c.name).ends_with("colbc");
    bool matmul_shape = std::string(c.name) == "matmul";
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      Mat x = colshape ? random_mat(4, 1, rng, 0.5, 2.0)
              : matmul_shape ? random_mat(3, 2, rng, 0.5, 2.0)
                             : random_mat(4, 3, rng, 0.5, 2.0);
      worst = std::max(worst, grad_check(c.f, x, 1e-6));
    }
    INFO(c.name);
    CHECK(worst < 1e-4);
  }
  // scalar broadcast
  auto scalar_bc = [&](Tape& t, Var x) {
    return t.sum(t.square(t.add(t.constant(other), x)));
  };
  CHECK(grad_check(scalar_bc, Mat::Constant(1, 1, 0.7), 1e-6) < 1e-4);
}

TEST_CASE("clamp subgradient is 1 inside and 0 outside") {
  Tape t;
  Mat x(3, 1);
  x << 4.0, -4.0, 0.5;
  Var v = t.leaf(x);
  Var c = t.clamp(v, -3.0, 3.0);
  CHECK(t.value(c)(0, 0) == 3.0);
  CHECK(t.value(c)(1, 0) == -3.0);
  CHECK(t.value(c)(2, 0) == 0.5);
  t.backward(t.sum(c));
  CHECK(t.grad(v)(0, 0) == 0.0);
  CHECK(t.grad(v)(1, 0) == 0.0);
  CHECK(t.grad(v)(2, 0) == 1.0);
}

TEST_CASE("three-layer MLP-like composite passes finite differences") {
  std::mt19937_64 rng(3);
  Mat w1 = random_mat(8, 5, rng), w2 = random_mat(8, 8, rng),
      w3 = random_mat(1, 8, rng);
  auto f = [&](Tape& t, Var x) {
    Var h1 = t.tanh_(t.matmul(t.constant(w1), x));
    Var h2 = t.silu(t.matmul(t.constant(w2), h1));
    return t.matmul(t.constant(w3), h2);
  };
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial)
    worst = std::max(worst, grad_check(f, random_mat(5, 1, rng), 1e-5));
  CHECK(worst < 1e-4);
}

TEST_CASE("backward is linear in the root") {
  std::mt19937_64 rng(5);
  Mat x0 = random_mat(4, 1, rng);
  const double a = 1.7, b = -0.6;
  auto build = [&](Tape& t, Var x, int which) {
    Var f = t.sum(t.square(x));
    Var g = t.sum(t.sin_(x));
    if (which == 0) return f;
    if (which == 1) return g;
    return t.add(t.scale(f, a), t.scale(g, b));
  };
  Mat grads[3];
  for (int which = 0; which < 3; ++which) {
    Tape t;
    Var x = t.leaf(x0);
    t.backward(build(t, x, which));
    grads[which] = t.grad(x);
  }
  CHECK((grads[2] - (a * grads[0] + b * grads[1])).norm() < 1e-12);
}

TEST_CASE("nodes off the path to the root have zero gradient") {
  Tape t;
  Var x = t.leaf(Mat::Constant(2, 1, 1.0));
  Var y = t.leaf(Mat::Constant(2, 1, 2.0));
  Var unused = t.square(y);
  (void)unused;
  t.backward(t.sum(t.square(x)));
  CHECK_FALSE(t.has_grad(y));
  CHECK(t.grad(y).isZero());
}

TEST_CASE("errors: shape mismatch, domain violations, cross-tape") {
  Tape t, t2;
  Var a = t.leaf(Mat::Zero(2, 3));
  Var b = t.leaf(Mat::Zero(3, 3));
  CHECK_THROWS_AS(t.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(t.atanh_(t.leaf(Mat::Constant(1, 1, 1.0))),
                  std::invalid_argument);
  CHECK_THROWS_AS(t.log_(t.leaf(Mat::Constant(1, 1, -1.0))),
                  std::invalid_argument);
  CHECK_THROWS_AS(t.sqrt_(t.leaf(Mat::Constant(1, 1, 0.0))),
                  std::invalid_argument);
  CHECK_THROWS_AS(t.div(a, t.leaf(Mat::Zero(2, 3))), std::invalid_argument);
  Var c = t2.leaf(Mat::Zero(2, 3));
  CHECK_THROWS_AS(t.add(a, c), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(a), std::invalid_argument);  // non-scalar root
}

TEST_CASE("tape reuse after clear keeps results identical") {
  std::mt19937_64 rng(9);
  Mat x = random_mat(6, 4, rng);
  Tape t;
  Mat first, second;
  for (int pass = 0; pass < 2; ++pass) {
    t.clear();
    Var v = t.leaf(x);
    Var out = t.sum(t.square(t.tanh_(t.layernorm(v))));
    t.backward(out);
    (pass == 0 ? first : second) = t.grad(v);
  }
  CHECK(first == second);
}

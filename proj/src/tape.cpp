#include "rfo/tape.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rfo {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("tape: " + msg);
}

std::string shape_of(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

// Broadcast classes for elementwise binaries.
enum class Bc { Full, Scalar, Col };

Bc classify(const Mat& operand, long rows, long cols) {
  if (operand.rows() == rows && operand.cols() == cols) return Bc::Full;
  if (operand.rows() == 1 && operand.cols() == 1) return Bc::Scalar;
  if (operand.rows() == rows && operand.cols() == 1) return Bc::Col;
  fail("operand " + shape_of(operand) + " does not broadcast to " +
       std::to_string(rows) + "x" + std::to_string(cols));
}

}  // namespace

int Var::rows() const { return static_cast<int>(tape->value(*this).rows()); }
int Var::cols() const { return static_cast<int>(tape->value(*this).cols()); }
const Mat& Var::value() const { return tape->value(*this); }

Tape::Node& Tape::fresh(Op op) {
  if (static_cast<int>(nodes_.size()) == size_) nodes_.emplace_back();
  Node& n = nodes_[size_++];
  n.op = op;
  n.a = n.b = -1;
  n.c0 = n.c1 = 0;
  n.i0 = n.i1 = 0;
  n.extra.clear();
  n.adj_used = false;
  return n;
}

void Tape::check_same_tape(Var v) const {
  if (v.tape != this) fail("vars from different tapes combined");
  if (v.idx < 0 || v.idx >= size_) fail("stale var handle");
}

const Tape::Node& Tape::node(Var v) const {
  check_same_tape(v);
  return nodes_[v.idx];
}

const Mat& Tape::value(Var v) const { return node(v).val; }

bool Tape::has_grad(Var v) const { return node(v).adj_used; }

Mat Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.adj_used) return n.adj;
  return Mat::Zero(n.val.rows(), n.val.cols());
}

void Tape::clear() { size_ = 0; }

Var Tape::constant(Mat v) {
  if (!v.allFinite()) fail("non-finite constant");
  Node& n = fresh(Op::Const);
  n.val = std::move(v);
  return wrap(size_ - 1);
}

Var Tape::constant(double v) { return constant(Mat::Constant(1, 1, v)); }

Var Tape::leaf(Mat v) {
  if (!v.allFinite()) fail("non-finite leaf value");
  Node& n = fresh(Op::Leaf);
  n.val = std::move(v);
  return wrap(size_ - 1);
}

#define RFO_BINARY(NAME, OP_ENUM, EXPR_FF, EXPR_GEN)                          \
  Var Tape::NAME(Var a, Var b) {                                              \
    check_same_tape(a);                                                       \
    check_same_tape(b);                                                       \
    const Mat& va = nodes_[a.idx].val;                                        \
    const Mat& vb = nodes_[b.idx].val;                                        \
    long rows = std::max(va.rows(), vb.rows());                               \
    long cols = std::max(va.cols(), vb.cols());                               \
    Bc ba = classify(va, rows, cols);                                         \
    Bc bb = classify(vb, rows, cols);                                         \
    Node& n = fresh(OP_ENUM);                                                 \
    n.a = a.idx;                                                              \
    n.b = b.idx;                                                              \
    if (ba == Bc::Full && bb == Bc::Full) {                                   \
      n.val = EXPR_FF;                                                        \
    } else {                                                                  \
      n.val.resize(rows, cols);                                               \
      for (long j = 0; j < cols; ++j)                                         \
        for (long i = 0; i < rows; ++i) {                                     \
          double x = ba == Bc::Full ? va(i, j)                                \
                     : ba == Bc::Scalar ? va(0, 0)                            \
                                        : va(i, 0);                           \
          double y = bb == Bc::Full ? vb(i, j)                                \
                     : bb == Bc::Scalar ? vb(0, 0)                            \
                                        : vb(i, 0);                           \
          n.val(i, j) = EXPR_GEN;                                             \
        }                                                                     \
    }                                                                         \
    return wrap(size_ - 1);                                                   \
  }

RFO_BINARY(add, Op::Add, va + vb, x + y)
RFO_BINARY(sub, Op::Sub, va - vb, x - y)
RFO_BINARY(mul, Op::Mul, va.cwiseProduct(vb), x* y)
#undef RFO_BINARY

Var Tape::div(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat& vb = nodes_[b.idx].val;
  if ((vb.array() == 0.0).any()) fail("division by zero");
  const Mat& va = nodes_[a.idx].val;
  long rows = std::max(va.rows(), vb.rows());
  long cols = std::max(va.cols(), vb.cols());
  Bc ba = classify(va, rows, cols);
  Bc bb = classify(vb, rows, cols);
  Node& n = fresh(Op::Div);
  n.a = a.idx;
  n.b = b.idx;
  if (ba == Bc::Full && bb == Bc::Full) {
    n.val = va.cwiseQuotient(vb);
  } else {
    n.val.resize(rows, cols);
    for (long j = 0; j < cols; ++j)
      for (long i = 0; i < rows; ++i) {
        double x = ba == Bc::Full ? va(i, j) : ba == Bc::Scalar ? va(0, 0) : va(i, 0);
        double y = bb == Bc::Full ? vb(i, j) : bb == Bc::Scalar ? vb(0, 0) : vb(i, 0);
        n.val(i, j) = x / y;
      }
  }
  return wrap(size_ - 1);
}

Var Tape::scale(Var a, double c) {
  check_same_tape(a);
  Node& n = fresh(Op::Scale);
  n.a = a.idx;
  n.c0 = c;
  n.val = c * nodes_[a.idx].val;
  return wrap(size_ - 1);
}

Var Tape::add_const(Var a, double c) {
  check_same_tape(a);
  Node& n = fresh(Op::AddConst);
  n.a = a.idx;
  n.c0 = c;
  n.val = (nodes_[a.idx].val.array() + c).matrix();
  return wrap(size_ - 1);
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat& va = nodes_[a.idx].val;
  const Mat& vb = nodes_[b.idx].val;
  if (va.cols() != vb.rows())
    fail("matmul shape mismatch " + shape_of(va) + " * " + shape_of(vb));
  Node& n = fresh(Op::MatMul);
  n.a = a.idx;
  n.b = b.idx;
  n.val.resize(va.rows(), vb.cols());
  n.val.noalias() = va * vb;
  return wrap(size_ - 1);
}

Var Tape::sum(Var a) {
  check_same_tape(a);
  Node& n = fresh(Op::Sum);
  n.a = a.idx;
  n.val = Mat::Constant(1, 1, nodes_[a.idx].val.sum());
  return wrap(size_ - 1);
}

Var Tape::mean(Var a) {
  check_same_tape(a);
  Node& n = fresh(Op::Mean);
  n.a = a.idx;
  n.val = Mat::Constant(1, 1, nodes_[a.idx].val.mean());
  return wrap(size_ - 1);
}

#define RFO_UNARY(NAME, OP_ENUM, CHECK, EXPR)        \
  Var Tape::NAME(Var a) {                            \
    check_same_tape(a);                              \
    const Mat& va = nodes_[a.idx].val;               \
    CHECK;                                           \
    Node& n = fresh(OP_ENUM);                        \
    n.a = a.idx;                                     \
    n.val = EXPR;                                    \
    return wrap(size_ - 1);                          \
  }

RFO_UNARY(square, Op::Square, , va.array().square().matrix())
RFO_UNARY(sqrt_, Op::Sqrt,
          if ((va.array() <= 0.0).any()) fail("sqrt operand not positive"),
          va.array().sqrt().matrix())
RFO_UNARY(exp_, Op::Exp, , va.array().exp().matrix())
RFO_UNARY(log_, Op::Log,
          if ((va.array() <= 0.0).any()) fail("log operand not positive"),
          va.array().log().matrix())
RFO_UNARY(tanh_, Op::Tanh, , va.array().tanh().matrix())
RFO_UNARY(sin_, Op::Sin, , va.array().sin().matrix())
RFO_UNARY(cos_, Op::Cos, , va.array().cos().matrix())
#undef RFO_UNARY

Var Tape::atanh_(Var a) {
  check_same_tape(a);
  const Mat& va = nodes_[a.idx].val;
  if ((va.array().abs() >= 1.0).any()) {
    double worst = va.array().abs().maxCoeff();
    fail("atanh operand outside (-1,1): " + std::to_string(worst));
  }
  Node& n = fresh(Op::Atanh);
  n.a = a.idx;
  n.val = va.unaryExpr([](double x) { return std::atanh(x); });
  return wrap(size_ - 1);
}

Var Tape::silu(Var a) {
  check_same_tape(a);
  const Mat& va = nodes_[a.idx].val;
  Node& n = fresh(Op::Silu);
  n.a = a.idx;
  n.val = (va.array() / (1.0 + (-va.array()).exp())).matrix();
  return wrap(size_ - 1);
}

Var Tape::layernorm(Var a, double eps) {
  check_same_tape(a);
  const Mat& va = nodes_[a.idx].val;
  if (va.rows() < 2) fail("layernorm needs at least 2 rows");
  Node& n = fresh(Op::LayerNorm);
  n.a = a.idx;
  n.c0 = eps;
  long rows = va.rows(), cols = va.cols();
  n.aux.resize(2, cols);
  n.val.resize(rows, cols);
  for (long j = 0; j < cols; ++j) {
    double m = va.col(j).mean();
    double var = (va.col(j).array() - m).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    n.aux(0, j) = m;
    n.aux(1, j) = inv;
    n.val.col(j) = ((va.col(j).array() - m) * inv).matrix();
  }
  return wrap(size_ - 1);
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail("concat of zero parts");
  long cols = -1, rows = 0;
  for (Var p : parts) {
    check_same_tape(p);
    const Mat& v = nodes_[p.idx].val;
    if (cols < 0) cols = v.cols();
    if (v.cols() != cols) fail("concat column mismatch");
    rows += v.rows();
  }
  Node& n = fresh(Op::ConcatRows);
  for (Var p : parts) n.extra.push_back(p.idx);
  n.val.resize(rows, cols);
  long r = 0;
  for (Var p : parts) {
    const Mat& v = nodes_[p.idx].val;
    n.val.middleRows(r, v.rows()) = v;
    r += v.rows();
  }
  return wrap(size_ - 1);
}

Var Tape::slice_rows(Var a, int r0, int nrows) {
  check_same_tape(a);
  const Mat& va = nodes_[a.idx].val;
  if (r0 < 0 || nrows < 1 || r0 + nrows > va.rows()) fail("slice out of range");
  Node& n = fresh(Op::SliceRows);
  n.a = a.idx;
  n.i0 = r0;
  n.i1 = nrows;
  n.val = va.middleRows(r0, nrows);
  return wrap(size_ - 1);
}

Var Tape::clamp(Var a, double lo, double hi) {
  check_same_tape(a);
  if (!(lo <= hi)) fail("clamp bounds inverted");
  Node& n = fresh(Op::Clamp);
  n.a = a.idx;
  n.c0 = lo;
  n.c1 = hi;
  n.val = nodes_[a.idx].val.array().max(lo).min(hi).matrix();
  return wrap(size_ - 1);
}

Var Tape::sqnorm(Var a) {
  check_same_tape(a);
  Node& n = fresh(Op::SqNorm);
  n.a = a.idx;
  n.val = Mat::Constant(1, 1, nodes_[a.idx].val.squaredNorm());
  return wrap(size_ - 1);
}

Var Tape::colwise_sqnorm(Var a) {
  check_same_tape(a);
  const Mat& va = nodes_[a.idx].val;
  Node& n = fresh(Op::ColSqNorm);
  n.a = a.idx;
  n.val = va.colwise().squaredNorm();
  return wrap(size_ - 1);
}

template <typename Expr>
void Tape::acc(int i, const Expr& e) {
  Node& p = nodes_[i];
  if (!p.adj_used) {
    p.adj.resize(p.val.rows(), p.val.cols());
    p.adj = e;
    p.adj_used = true;
  } else {
    p.adj += e;
  }
}

// Reduces adjoint g (shaped like the op result) onto a broadcast parent.
namespace {
Mat reduce_to(const Mat& g, long rows, long cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Mat::Constant(1, 1, g.sum());
  // column broadcast
  return g.rowwise().sum();
}
}  // namespace

void Tape::backprop_binary(const Node& n) {
  const Mat& g = n.adj;
  Node& pa = nodes_[n.a];
  Node& pb = nodes_[n.b];
  long rows = n.val.rows(), cols = n.val.cols();
  bool fa = pa.val.rows() == rows && pa.val.cols() == cols;
  bool fb = pb.val.rows() == rows && pb.val.cols() == cols;
  auto expand = [&](const Mat& m) -> Mat {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == 1) return Mat::Constant(rows, cols, m(0, 0));
    return m.replicate(1, cols);
  };
  switch (n.op) {
    case Op::Add:
      if (fa) acc(n.a, g); else acc(n.a, reduce_to(g, pa.val.rows(), pa.val.cols()));
      if (fb) acc(n.b, g); else acc(n.b, reduce_to(g, pb.val.rows(), pb.val.cols()));
      break;
    case Op::Sub:
      if (fa) acc(n.a, g); else acc(n.a, reduce_to(g, pa.val.rows(), pa.val.cols()));
      if (fb) acc(n.b, -g); else acc(n.b, reduce_to(Mat(-g), pb.val.rows(), pb.val.cols()));
      break;
    case Op::Mul: {
      Mat ga = g.cwiseProduct(expand(pb.val));
      Mat gb = g.cwiseProduct(expand(pa.val));
      acc(n.a, reduce_to(ga, pa.val.rows(), pa.val.cols()));
      acc(n.b, reduce_to(gb, pb.val.rows(), pb.val.cols()));
      break;
    }
    case Op::Div: {
      Mat be = expand(pb.val);
      Mat ga = g.cwiseQuotient(be);
      Mat gb = -g.cwiseProduct(n.val).cwiseQuotient(be);
      acc(n.a, reduce_to(ga, pa.val.rows(), pa.val.cols()));
      acc(n.b, reduce_to(gb, pb.val.rows(), pb.val.cols()));
      break;
    }
    default:
      fail("not a binary op");
  }
}

void Tape::backward(Var root) {
  check_same_tape(root);
  Node& r = nodes_[root.idx];
  if (r.val.rows() != 1 || r.val.cols() != 1) fail("backward root must be scalar");
  r.adj.resize(1, 1);
  r.adj(0, 0) = 1.0;
  r.adj_used = true;
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.adj_used) continue;
    const Mat& g = n.adj;
    switch (n.op) {
      case Op::Const:
      case Op::Leaf:
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
        backprop_binary(n);
        break;
      case Op::MatMul: {
        const Mat& va = nodes_[n.a].val;
        const Mat& vb = nodes_[n.b].val;
        acc(n.a, g * vb.transpose());
        acc(n.b, va.transpose() * g);
        break;
      }
      case Op::Sum:
        acc(n.a, Mat::Constant(nodes_[n.a].val.rows(), nodes_[n.a].val.cols(),
                               g(0, 0)));
        break;
      case Op::Mean:
        acc(n.a, Mat::Constant(nodes_[n.a].val.rows(), nodes_[n.a].val.cols(),
                               g(0, 0) / nodes_[n.a].val.size()));
        break;
      case Op::Square:
        acc(n.a, 2.0 * g.cwiseProduct(nodes_[n.a].val));
        break;
      case Op::Sqrt:
        acc(n.a, 0.5 * g.cwiseQuotient(n.val));
        break;
      case Op::Exp:
        acc(n.a, g.cwiseProduct(n.val));
        break;
      case Op::Log:
        acc(n.a, g.cwiseQuotient(nodes_[n.a].val));
        break;
      case Op::Tanh:
        acc(n.a, (g.array() * (1.0 - n.val.array().square())).matrix());
        break;
      case Op::Atanh:
        acc(n.a, (g.array() / (1.0 - nodes_[n.a].val.array().square())).matrix());
        break;
      case Op::Silu: {
        auto x = nodes_[n.a].val.array();
        auto s = 1.0 / (1.0 + (-x).exp());
        acc(n.a, (g.array() * (s + x * s * (1.0 - s))).matrix());
        break;
      }
      case Op::Sin:
        acc(n.a, (g.array() * nodes_[n.a].val.array().cos()).matrix());
        break;
      case Op::Cos:
        acc(n.a, (-g.array() * nodes_[n.a].val.array().sin()).matrix());
        break;
      case Op::LayerNorm: {
        long rows = n.val.rows(), cols = n.val.cols();
        Mat dx(rows, cols);
        for (long j = 0; j < cols; ++j) {
          double inv = n.aux(1, j);
          double gm = g.col(j).mean();
          double gym = g.col(j).cwiseProduct(n.val.col(j)).mean();
          dx.col(j) = (inv * (g.col(j).array() - gm - n.val.col(j).array() * gym)).matrix();
        }
        acc(n.a, dx);
        break;
      }
      case Op::ConcatRows: {
        long r0 = 0;
        for (int pi : n.extra) {
          long pr = nodes_[pi].val.rows();
          acc(pi, g.middleRows(r0, pr));
          r0 += pr;
        }
        break;
      }
      case Op::SliceRows: {
        Mat full = Mat::Zero(nodes_[n.a].val.rows(), nodes_[n.a].val.cols());
        full.middleRows(n.i0, n.i1) = g;
        acc(n.a, full);
        break;
      }
      case Op::Clamp: {
        auto x = nodes_[n.a].val.array();
        Mat mask = ((x >= n.c0) && (x <= n.c1)).cast<double>();
        acc(n.a, g.cwiseProduct(mask));
        break;
      }
      case Op::SqNorm:
        acc(n.a, 2.0 * g(0, 0) * nodes_[n.a].val);
        break;
      case Op::ColSqNorm: {
        Mat gx = nodes_[n.a].val;
        for (long j = 0; j < gx.cols(); ++j) gx.col(j) *= 2.0 * g(0, j);
        acc(n.a, gx);
        break;
      }
      case Op::Scale:
        acc(n.a, n.c0 * g);
        break;
      case Op::AddConst:
        acc(n.a, g);
        break;
    }
  }
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Mat& x,
                  double eps) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be > 0");
  Tape t;
  Var xv = t.leaf(x);
  Var out = f(t, xv);
  if (!t.value(out).allFinite())
    throw std::runtime_error("grad_check: non-finite forward value");
  t.backward(out);
  Mat analytic = t.grad(xv);
  double max_err = 0.0;
  for (long j = 0; j < x.cols(); ++j)
    for (long i = 0; i < x.rows(); ++i) {
      Mat xp = x, xm = x;
      xp(i, j) += eps;
      xm(i, j) -= eps;
      Tape tp, tm;
      double fp = tp.value(f(tp, tp.leaf(xp)))(0, 0);
      double fm = tm.value(f(tm, tm.leaf(xm)))(0, 0);
      double cd = (fp - fm) / (2.0 * eps);
      double err = std::abs(analytic(i, j) - cd) / (std::abs(cd) + 1e-8);
      max_err = std::max(max_err, err);
    }
  return max_err;
}

}  // namespace rfo

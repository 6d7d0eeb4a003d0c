#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rfo {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is cleared.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;

  int rows() const;
  int cols() const;
  const Mat& value() const;
};

enum class Op : std::uint8_t {
  Const,
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Sum,
  Mean,
  Square,
  Sqrt,
  Exp,
  Log,
  Tanh,
  Atanh,
  Silu,
  Sin,
  Cos,
  LayerNorm,
  ConcatRows,
  SliceRows,
  Clamp,
  SqNorm,
  ColSqNorm,
  Scale,
  AddConst,
};

/// Reverse-mode autodiff over an append-only tape of matrix-valued nodes.
///
/// Values are dense 64-bit matrices; a scalar is 1x1 and a vector is d x 1.
/// clear() keeps node storage so a tape rebuilt with the same shapes does
/// not reallocate.
class Tape {
 public:
  Var constant(Mat v);
  Var constant(double v);
  /// Differentiable input; grad() is defined for leaves after backward().
  Var leaf(Mat v);

  // Elementwise binary ops. Either operand may broadcast from 1x1 (scalar)
  // or r x 1 (per-row value applied across columns).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);

  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var matmul(Var a, Var b);
  Var sum(Var a);
  Var mean(Var a);
  Var square(Var a);
  Var sqrt_(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var tanh_(Var a);
  Var atanh_(Var a);
  Var silu(Var a);
  Var sin_(Var a);
  Var cos_(Var a);
  /// Standardizes each column to zero mean / unit variance (population
  /// variance, stabilized by eps). Affine scale/shift is the caller's job.
  Var layernorm(Var a, double eps = 1e-5);
  Var concat_rows(std::span<const Var> parts);
  Var slice_rows(Var a, int r0, int nrows);
  /// Subgradient convention: backward passes 1 inside [lo, hi], 0 outside.
  Var clamp(Var a, double lo, double hi);
  /// Sum of squares of all entries -> scalar.
  Var sqnorm(Var a);
  /// Squared norm of each column -> 1 x cols.
  Var colwise_sqnorm(Var a);
  Var neg(Var a) { return scale(a, -1.0); }

  /// Accumulates adjoints of every node reachable from root (root must be
  /// scalar). May be called once per built tape.
  void backward(Var root);

  const Mat& value(Var v) const;
  /// Adjoint of v after backward(); zero matrix if v is unreachable.
  Mat grad(Var v) const;
  bool has_grad(Var v) const;

  /// Resets the logical size to zero; node buffers are kept for reuse.
  void clear();
  int size() const { return size_; }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1;
    double c0 = 0, c1 = 0;
    int i0 = 0, i1 = 0;
    Mat val;
    Mat adj;
    Mat aux;  // layernorm: 2 x cols (mean; inv std)
    std::vector<int> extra;
    bool adj_used = false;
  };

  Node& fresh(Op op);
  Var wrap(int idx) { return Var{this, idx}; }
  void check_same_tape(Var v) const;
  const Node& node(Var v) const;
  // Adds e into the adjoint of node i (first touch assigns).
  template <typename Expr>
  void acc(int i, const Expr& e);
  void backprop_binary(const Node& n);

  // Deque so node references stay valid while new nodes are appended.
  std::deque<Node> nodes_;
  int size_ = 0;
};

// Expression-style operators.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator*(double c, Var a) { return a.tape->scale(a, c); }
inline Var operator*(Var a, double c) { return a.tape->scale(a, c); }
inline Var operator-(Var a) { return a.tape->neg(a); }
inline Var operator+(Var a, double c) { return a.tape->add_const(a, c); }
inline Var operator-(Var a, double c) { return a.tape->add_const(a, -c); }

/// Max over coordinates of |analytic - central difference| / (|cd| + 1e-8)
/// for a scalar-valued tape program f evaluated at x.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Mat& x,
                  double eps);

}  // namespace rfo

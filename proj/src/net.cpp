#include "rfo/net.hpp"

#include <cmath>
#include <stdexcept>

namespace rfo {

Mat& ParamSet::at(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("no tensor named " + name);
}

const Mat& ParamSet::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("no tensor named " + name);
}

long ParamSet::scalar_count() const {
  long n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

Mat orthogonal_matrix(long rows, long cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  bool transpose = rows < cols;
  long r = std::max(rows, cols), c = std::min(rows, cols);
  Mat g(r, c);
  for (long j = 0; j < c; ++j)
    for (long i = 0; i < r; ++i) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(r, c);
  Mat rr = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (long j = 0; j < c; ++j)
    if (rr(j, j) < 0) q.col(j) = -q.col(j);
  return transpose ? Mat(q.transpose()) : q;
}

MlpParams mlp_init(const MlpConfig& cfg, std::mt19937_64& rng) {
  if (cfg.in < 1 || cfg.out < 1)
    throw std::invalid_argument("mlp_init: bad widths");
  MlpParams p;
  p.cfg = cfg;
  int prev = cfg.in;
  for (size_t l = 0; l < cfg.hidden.size(); ++l) {
    int w = cfg.hidden[l];
    std::string pre = "layer" + std::to_string(l) + ".";
    p.ps.tensors.push_back({pre + "W", orthogonal_matrix(w, prev, rng)});
    p.ps.tensors.push_back({pre + "b", Mat::Zero(w, 1)});
    p.ps.tensors.push_back({pre + "ln_scale", Mat::Ones(w, 1)});
    p.ps.tensors.push_back({pre + "ln_shift", Mat::Zero(w, 1)});
    prev = w;
  }
  p.ps.tensors.push_back({"out.W", orthogonal_matrix(cfg.out, prev, rng)});
  p.ps.tensors.push_back({"out.b", Mat::Zero(cfg.out, 1)});
  return p;
}

BoundMlp mlp_bind(Tape& t, const MlpParams& p, bool differentiable) {
  BoundMlp b;
  b.params = &p;
  b.differentiable = differentiable;
  b.vars.reserve(p.ps.tensors.size());
  for (const auto& tensor : p.ps.tensors)
    b.vars.push_back(differentiable ? t.leaf(tensor.value)
                                    : t.constant(tensor.value));
  return b;
}

Var mlp_forward(Tape& t, const BoundMlp& b, Var x) {
  const MlpConfig& cfg = b.params->cfg;
  if (x.rows() != cfg.in)
    throw std::invalid_argument("mlp_forward: input width " +
                                std::to_string(x.rows()) + ", expected " +
                                std::to_string(cfg.in));
  size_t vi = 0;
  Var h = x;
  for (size_t l = 0; l < cfg.hidden.size(); ++l) {
    Var w = b.vars[vi++], bias = b.vars[vi++];
    Var ln_scale = b.vars[vi++], ln_shift = b.vars[vi++];
    Var z = t.add(t.matmul(w, h), bias);
    Var normed = t.add(t.mul(t.layernorm(z), ln_scale), ln_shift);
    h = t.silu(normed);
  }
  Var w = b.vars[vi++], bias = b.vars[vi++];
  return t.add(t.matmul(w, h), bias);
}

ParamSet mlp_grads(const Tape& t, const BoundMlp& b) {
  ParamSet g;
  g.tensors.reserve(b.vars.size());
  for (size_t i = 0; i < b.vars.size(); ++i)
    g.tensors.push_back({b.params->ps.tensors[i].name, t.grad(b.vars[i])});
  return g;
}

AdamWState adamw_init(const ParamSet& params, const AdamWConfig& cfg) {
  AdamWState s;
  s.cfg = cfg;
  for (const auto& t : params.tensors) {
    s.m.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
    s.v.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
  }
  return s;
}

void adamw_step(ParamSet& params, const ParamSet& grads, AdamWState& state,
                double lr) {
  if (lr < 0) throw std::invalid_argument("adamw_step: negative lr");
  if (params.tensors.size() != grads.tensors.size() ||
      params.tensors.size() != state.m.size())
    throw std::invalid_argument("adamw_step: size mismatch");
  state.step += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    Mat& p = params.tensors[i].value;
    const Mat& g = grads.tensors[i].value;
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw std::invalid_argument("adamw_step: shape mismatch for " +
                                  params.tensors[i].name);
    if (!g.allFinite())
      throw std::runtime_error("adamw_step: non-finite gradient for " +
                               params.tensors[i].name);
    Mat& m = state.m[i];
    Mat& v = state.v[i];
    m = b1 * m + (1.0 - b1) * g;
    v = (b2 * v.array() + (1.0 - b2) * g.array().square()).matrix();
    p.array() -= lr * ((m.array() / bc1) /
                           ((v.array() / bc2).sqrt() + state.cfg.eps) +
                       state.cfg.weight_decay * p.array());
  }
}

double LrSchedule::rate(long t) const {
  if (t < 0) throw std::invalid_argument("schedule: negative step");
  if (mode == Mode::Constant) return eta0;
  double frac = 1.0 - static_cast<double>(t) / static_cast<double>(total);
  return eta0 * std::max(0.0, frac);
}

double global_grad_norm(const ParamSet& grads) {
  double sq = 0;
  for (const auto& t : grads.tensors) sq += t.value.squaredNorm();
  return std::sqrt(sq);
}

void clip_grad_norm(ParamSet& grads, double max_norm) {
  double n = global_grad_norm(grads);
  if (n > max_norm && n > 0) {
    double s = max_norm / n;
    for (auto& t : grads.tensors) t.value *= s;
  }
}

}  // namespace rfo

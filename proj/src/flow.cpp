#include "rfo/flow.hpp"

#include <array>
#include <stdexcept>

namespace rfo {

void FlowConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("FlowConfig: steps must be >= 1");
  if (!(clamp_bound > 0))
    throw std::invalid_argument("FlowConfig: clamp_bound must be > 0");
  if (chunk < 1) throw std::invalid_argument("FlowConfig: chunk must be >= 1");
}

int vf_input_width(int act_dim, int chunk, int obs_dim) {
  return act_dim * chunk + 1 + obs_dim;
}

ActionSample sample_action(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                           Var obs, const Mat& noise) {
  cfg.validate();
  long n = noise.cols();
  if (t.value(obs).cols() != n)
    throw std::invalid_argument("sample_action: obs/noise batch mismatch");
  const double du = 1.0 / cfg.steps;
  ActionSample out;
  out.noise = noise;
  Var x = t.constant(noise);
  out.chain.push_back(x);
  for (int k = 0; k < cfg.steps; ++k) {
    Var u = t.constant(Mat::Constant(1, n, k * du));
    std::array<Var, 3> parts{x, u, obs};
    Var field = mlp_forward(t, vf, t.concat_rows(parts));
    x = t.add(x, t.scale(field, du));
    if (!t.value(x).allFinite())
      throw std::runtime_error("sample_action: non-finite flow state at step " +
                               std::to_string(k + 1));
    out.chain.push_back(x);
  }
  out.pre_tanh = x;
  out.action = t.tanh_(x);
  return out;
}

ActionSample sample_chunk(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                          Var obs, const Mat& noise) {
  // The Euler core is dimension-agnostic; a chunk is a flow over R^{d*C}.
  return sample_action(t, vf, cfg, obs, noise);
}

Mat clamp_pretanh(const Mat& pre_tanh, double bound) {
  return pre_tanh.array().max(-bound).min(bound).matrix();
}

}  // namespace rfo

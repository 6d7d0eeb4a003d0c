#include "rfo/cfm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace rfo {

void RecentBuffer::rotate(std::vector<std::pair<Vec, Vec>> pairs) {
  previous = std::move(current);
  current = std::move(pairs);
}

const std::pair<Vec, Vec>& RecentBuffer::sample(std::mt19937_64& rng) const {
  std::size_t total = size();
  if (total == 0) throw std::runtime_error("RecentBuffer: sample from empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::size_t i = pick(rng);
  return i < current.size() ? current[i] : previous[i - current.size()];
}

Mat interpolate(const Mat& eps, const Mat& a, double u) {
  if (u < 0.0 || u > 1.0)
    throw std::invalid_argument("interpolate: u outside [0,1]");
  if (eps.rows() != a.rows() || eps.cols() != a.cols())
    throw std::invalid_argument("interpolate: shape mismatch");
  return (1.0 - u) * eps + u * a;
}

Var cfm_loss_batch(Tape& t, const BoundMlp& vf, Var psi, Var u, Var obs,
                   Var target) {
  long batch = t.value(psi).cols();
  std::array<Var, 3> parts{psi, u, obs};
  Var field = mlp_forward(t, vf, t.concat_rows(parts));
  Var residual = t.sub(field, target);
  return t.scale(t.sqnorm(residual), 1.0 / static_cast<double>(batch));
}

namespace {

struct CfmBatch {
  Mat psi, u, obs, target;
};

// One shared (u, eps) draw per sampled pair; fresh i.i.d. per pair.
template <typename DrawPair>
CfmBatch assemble(int target_dim, int obs_dim, int batch, std::mt19937_64& rng,
                  DrawPair&& draw_pair) {
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  CfmBatch out;
  out.psi.resize(target_dim, batch);
  out.u.resize(1, batch);
  out.obs.resize(obs_dim, batch);
  out.target.resize(target_dim, batch);
  for (int j = 0; j < batch; ++j) {
    auto [s, a] = draw_pair(rng);
    double u = unif01(rng);
    Vec eps(target_dim);
    for (int i = 0; i < target_dim; ++i) eps(i) = gauss(rng);
    out.u(0, j) = u;
    out.obs.col(j) = s;
    out.psi.col(j) = (1.0 - u) * eps + u * a;
    out.target.col(j) = a - eps;
  }
  return out;
}

}  // namespace

Var cfm_loss_past(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                  const RecentBuffer& buffer, int batch,
                  std::mt19937_64& rng) {
  cfg.validate();
  if (buffer.size() == 0)
    throw std::runtime_error("cfm_loss_past: empty buffer");
  if (batch < 1) throw std::invalid_argument("cfm_loss_past: batch < 1");
  const auto& probe = buffer.current.empty() ? buffer.previous.front()
                                             : buffer.current.front();
  int obs_dim = static_cast<int>(probe.first.size());
  int target_dim = static_cast<int>(probe.second.size());
  CfmBatch b = assemble(target_dim, obs_dim, batch, rng,
                        [&](std::mt19937_64& r) -> std::pair<Vec, Vec> {
                          const auto& p = buffer.sample(r);
                          return {p.first, p.second};
                        });
  return cfm_loss_batch(t, vf, t.constant(std::move(b.psi)),
                        t.constant(std::move(b.u)),
                        t.constant(std::move(b.obs)),
                        t.constant(std::move(b.target)));
}

Var cfm_loss_uniform(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                     const RolloutStates& states, int target_dim, int batch,
                     std::mt19937_64& rng, bool tanh_targets) {
  cfg.validate();
  if (states.states.empty())
    throw std::runtime_error("cfm_loss_uniform: empty rollout state set");
  if (batch < 1) throw std::invalid_argument("cfm_loss_uniform: batch < 1");
  int obs_dim = static_cast<int>(states.states.front().size());
  std::uniform_int_distribution<std::size_t> pick(0, states.states.size() - 1);
  std::uniform_real_distribution<double> uact(-1.0, 1.0);
  CfmBatch b = assemble(
      target_dim, obs_dim, batch, rng,
      [&](std::mt19937_64& r) -> std::pair<Vec, Vec> {
        const Vec& s = states.states[pick(r)];
        Vec a(target_dim);
        for (int i = 0; i < target_dim; ++i) {
          double squashed = uact(r);
          if (tanh_targets) {
            a(i) = squashed;
          } else {
            double pre = std::atanh(squashed * (1.0 - 1e-6));
            a(i) = std::clamp(pre, -cfg.clamp_bound, cfg.clamp_bound);
          }
        }
        return {s, a};
      });
  return cfm_loss_batch(t, vf, t.constant(std::move(b.psi)),
                        t.constant(std::move(b.u)),
                        t.constant(std::move(b.obs)),
                        t.constant(std::move(b.target)));
}

}  // namespace rfo

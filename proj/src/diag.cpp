#include "rfo/diag.hpp"

#include <cmath>
#include <stdexcept>

namespace rfo {

CfmDraws make_cfm_draws(int dim, int n, std::mt19937_64& rng) {
  if (n < 1) throw std::invalid_argument("make_cfm_draws: n must be >= 1");
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  CfmDraws d;
  d.u.resize(n);
  d.eps.resize(dim, n);
  for (int j = 0; j < n; ++j) {
    d.u(j) = unif01(rng);
    for (int i = 0; i < dim; ++i) d.eps(i, j) = gauss(rng);
  }
  return d;
}

double cfm_loss_pointwise(const MlpParams& vf, const Vec& obs,
                          const Vec& pre_tanh, const CfmDraws& draws) {
  int n = static_cast<int>(draws.u.size());
  int dim = static_cast<int>(pre_tanh.size());
  Mat psi(dim, n), u(1, n), o(static_cast<int>(obs.size()), n), target(dim, n);
  for (int j = 0; j < n; ++j) {
    u(0, j) = draws.u(j);
    psi.col(j) = (1.0 - draws.u(j)) * draws.eps.col(j) + draws.u(j) * pre_tanh;
    target.col(j) = pre_tanh - draws.eps.col(j);
    o.col(j) = obs;
  }
  Tape t;
  BoundMlp b = mlp_bind(t, vf, false);
  Var loss = cfm_loss_batch(t, b, t.constant(std::move(psi)),
                            t.constant(std::move(u)), t.constant(std::move(o)),
                            t.constant(std::move(target)));
  return t.value(loss)(0, 0);
}

KlEstimate kl_estimate(const PolicySnapshot& old_policy,
                       const PolicySnapshot& new_policy,
                       const std::vector<std::pair<Vec, Vec>>& pairs,
                       const KlOptions& opt, std::mt19937_64& rng) {
  if (pairs.empty()) throw std::invalid_argument("kl_estimate: no pairs");
  KlEstimate out;
  double acc = 0;
  for (const auto& [obs, pre_tanh] : pairs) {
    int dim = static_cast<int>(pre_tanh.size());
    CfmDraws draws = make_cfm_draws(dim, opt.samples_per_pair, rng);
    double l_old = cfm_loss_pointwise(old_policy.vf, obs, pre_tanh, draws);
    CfmDraws draws_new = opt.common_random_numbers
                             ? draws
                             : make_cfm_draws(dim, opt.samples_per_pair, rng);
    double l_new = cfm_loss_pointwise(new_policy.vf, obs, pre_tanh, draws_new);
    double exponent = l_old - l_new;  // log of ratio new/old
    if (exponent < -30.0 || exponent > 30.0) {
      exponent = std::clamp(exponent, -30.0, 30.0);
      out.exponent_clamped = true;
    }
    double rho = std::exp(exponent);
    acc += (rho - 1.0) - exponent;  // k3(rho), ln(rho) == exponent
  }
  out.value = acc / static_cast<double>(pairs.size());
  return out;
}

double past_cfm_monitor(const MlpParams& vf,
                        const std::vector<std::pair<Vec, Vec>>& pairs,
                        int samples_per_pair, std::mt19937_64& rng) {
  if (pairs.empty()) throw std::invalid_argument("past_cfm_monitor: no pairs");
  double acc = 0;
  for (const auto& [obs, pre_tanh] : pairs) {
    CfmDraws draws = make_cfm_draws(static_cast<int>(pre_tanh.size()),
                                    samples_per_pair, rng);
    acc += cfm_loss_pointwise(vf, obs, pre_tanh, draws);
  }
  return acc / static_cast<double>(pairs.size());
}

}  // namespace rfo

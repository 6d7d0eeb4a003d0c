#pragma once

#include "rfo/cfm.hpp"
#include "rfo/flow.hpp"
#include "rfo/net.hpp"

#include <random>
#include <utility>
#include <vector>

namespace rfo {

/// Frozen actor parameters captured at an iteration boundary.
struct PolicySnapshot {
  MlpParams vf;
};

/// Shared (u, eps) draws for comparing two policies on the same pair
/// (common random numbers).
struct CfmDraws {
  Vec u;    // n draws in [0,1]
  Mat eps;  // dim x n
};

CfmDraws make_cfm_draws(int dim, int n, std::mt19937_64& rng);

/// Monte-Carlo CFM loss for a single (s, a_pre) pair over the given draws.
double cfm_loss_pointwise(const MlpParams& vf, const Vec& obs,
                          const Vec& pre_tanh, const CfmDraws& draws);

struct KlOptions {
  int samples_per_pair = 256;
  bool common_random_numbers = true;
};

struct KlEstimate {
  double value = 0;
  bool exponent_clamped = false;
};

/// K3 estimate of KL(old || new) over pairs generated under the old
/// policy. Per pair the density ratio new/old is approximated by
/// exp(L_old - L_new); k3(rho) = (rho - 1) - ln rho >= 0.
KlEstimate kl_estimate(const PolicySnapshot& old_policy,
                       const PolicySnapshot& new_policy,
                       const std::vector<std::pair<Vec, Vec>>& pairs,
                       const KlOptions& opt, std::mt19937_64& rng);

/// Mean pointwise CFM loss of the current policy on the previous
/// iteration's (s, a_pre) pairs (the drift monitor).
double past_cfm_monitor(const MlpParams& vf,
                        const std::vector<std::pair<Vec, Vec>>& pairs,
                        int samples_per_pair, std::mt19937_64& rng);

}  // namespace rfo

#pragma once

#include "rfo/flow.hpp"
#include "rfo/net.hpp"

#include <random>
#include <utility>
#include <vector>

namespace rfo {

/// (observation, CFM target) pairs from the two most recent rollout
/// iterations. Targets are clamped pre-tanh actions (or tanh actions when
/// the tanh-target variant is enabled).
struct RecentBuffer {
  std::vector<std::pair<Vec, Vec>> current;
  std::vector<std::pair<Vec, Vec>> previous;

  /// previous <- current, current <- pairs.
  void rotate(std::vector<std::pair<Vec, Vec>> pairs);
  std::size_t size() const { return current.size() + previous.size(); }
  const std::pair<Vec, Vec>& sample(std::mt19937_64& rng) const;
};

/// Observations visited during the current iteration's rollout.
struct RolloutStates {
  std::vector<Vec> states;

  void replace(std::vector<Vec> s) { states = std::move(s); }
};

/// Linear interpolation (1-u)*eps + u*a.
Mat interpolate(const Mat& eps, const Mat& a, double u);

/// Monte-Carlo CFM loss over a prepared batch: mean over columns of
/// |vf(psi, u | s) - target|^2. psi/target are d x B, u is 1 x B, obs is
/// obs_dim x B.
Var cfm_loss_batch(Tape& t, const BoundMlp& vf, Var psi, Var u, Var obs,
                   Var target);

/// Past-data CFM (stability): targets sampled uniformly from the buffer,
/// fresh u ~ U[0,1] and eps ~ N(0,I) per pair.
Var cfm_loss_past(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                  const RecentBuffer& buffer, int batch,
                  std::mt19937_64& rng);

/// Uniform-exploration CFM: targets drawn uniformly over the bounded
/// action space, mapped to pre-tanh space via atanh (unless tanh_targets).
Var cfm_loss_uniform(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                     const RolloutStates& states, int target_dim, int batch,
                     std::mt19937_64& rng, bool tanh_targets = false);

}  // namespace rfo

#pragma once

#include "rfo/net.hpp"

#include <random>
#include <vector>

namespace rfo {

/// Two independent value networks; predictions are averaged everywhere.
struct CriticPair {
  MlpParams first;
  MlpParams second;
  AdamWState opt_first;
  AdamWState opt_second;
};

CriticPair critic_init(int obs_dim, const std::vector<int>& hidden,
                       std::mt19937_64& rng, const AdamWConfig& opt_cfg = {});

/// Detached averaged values for a batch of observations (1 x N).
Mat critic_values(const CriticPair& pair, const Mat& obs);

/// Averaged value on a live tape; bind the critics with
/// differentiable=false when only the state gradient should flow.
Var critic_value_var(Tape& t, const BoundMlp& c1, const BoundMlp& c2, Var obs);

/// TD-lambda targets over a segment.
/// rewards: H x N; values: (H+1) x N, row t = averaged V(s_t), raw (the
/// done mask applies the terminal bootstrap-0); done[t] marks transitions
/// that ended an episode (reset follows inside the segment).
/// y_t = r_t + gamma*(1-done_t)*[(1-lambda) V(s_{t+1}) + lambda y_{t+1}],
/// y_H = V(s_H).
Mat td_lambda_targets(const Mat& rewards, const Mat& values,
                      const std::vector<bool>& done, double gamma,
                      double lambda);

/// Trains both critics for `epochs` passes of `minibatches` shuffled
/// minibatches against fixed targets (obs: obs_dim x M, targets: 1 x M).
/// Returns the mean MSE across all minibatch steps and both critics.
double critic_update(CriticPair& pair, const Mat& obs, const Mat& targets,
                     int epochs, int minibatches, double lr,
                     std::mt19937_64& rng);

}  // namespace rfo

#pragma once

#include "rfo/env.hpp"
#include "rfo/net.hpp"

#include <functional>
#include <random>
#include <utility>
#include <vector>

namespace rfo {

/// One policy sample: pre-squash output and tanh-squashed action, both on
/// the tape. For chunked policies these stack C consecutive actions.
struct Sampled {
  Var pre_tanh;
  Var action;
};

/// Draws an action (chunk) for a batch of observations; noise is
/// noise_rows x N, freshly drawn by the rollout at each sample boundary.
using SampleFn = std::function<Sampled(Tape&, Var obs, const Mat& noise)>;

/// H consecutive transitions for all environments, tape-connected from the
/// actor parameters to every reward node.
struct SegmentRecord {
  int horizon = 0;
  std::vector<Var> reward_vars;  // 1 x N each
  Mat rewards;                   // H x N (values)
  std::vector<bool> done;        // per step, uniform across envs
  std::vector<Mat> obs;          // H+1 normalized observation batches
  Var terminal_obs;              // normalized obs of s_H, on tape
  /// (observation batch, pre-tanh batch) captured at each sample boundary;
  /// these become RecentBuffer pairs.
  std::vector<std::pair<Mat, Mat>> chunk_samples;
};

struct RolloutOptions {
  int horizon = 32;
  int noise_rows = 0;   // rows of one noise draw (act_dim * chunk)
  int chunk = 1;        // environment steps per policy sample
  bool reward_free = false;  // zero the reward signal (exploration studies)
};

/// Rolls the batched env forward H steps on the tape. States persist
/// across segments; episode-length resets re-inject fresh constants and
/// force a resample at the next step.
SegmentRecord rollout_segment(Tape& t, const SampleFn& sample,
                              const RolloutOptions& opt, BatchedEnv& envs,
                              ObsNormalizer& normalizer,
                              std::mt19937_64& noise_rng,
                              std::mt19937_64& reset_rng);

/// Short-horizon surrogate: mean over envs of the discounted segment
/// return plus the terminal value bootstrap. The discount restarts at
/// in-segment episode boundaries, where the bootstrap is 0. Critics must
/// be bound non-differentiably so only the state gradient flows.
Var surrogate(Tape& t, const SegmentRecord& seg, const BoundMlp& critic1,
              const BoundMlp& critic2, double gamma);

struct LossWeights {
  double c_past = 0.2;
  double c_uni = 0.2;
};

/// Total policy loss -J + c_past * L_past + c_uni * L_uni.
Var policy_loss(Tape& t, Var j_hat, Var loss_past, Var loss_uni,
                const LossWeights& w);

struct ActorUpdateStats {
  double grad_norm_pre = 0;
  double grad_norm_post = 0;
};

/// Clips the global gradient norm and applies one AdamW step.
ActorUpdateStats actor_update(ParamSet& params, ParamSet grads,
                              AdamWState& opt, double lr, double clip_norm);

}  // namespace rfo

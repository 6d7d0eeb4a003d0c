#pragma once

#include "rfo/cfm.hpp"
#include "rfo/config.hpp"
#include "rfo/critic.hpp"
#include "rfo/env.hpp"
#include "rfo/flow.hpp"
#include "rfo/net.hpp"
#include "rfo/rpg.hpp"

#include <string>
#include <vector>

namespace rfo {

struct MetricsRow {
  int iter = 0;
  double segment_return = 0;  // mean undiscounted segment reward sum
  double eval_mean = 0;
  double eval_std = 0;
  double j_hat = 0;
  double loss_past = 0;
  double loss_uni = 0;
  double policy_loss = 0;
  double critic_loss = 0;
  double grad_norm_pre = 0;
  double grad_norm_post = 0;
  double actor_lr = 0;
  double critic_lr = 0;
  double kl = 0;
  double kl_clamped = 0;
  double past_cfm = 0;
};

struct RunMetrics {
  std::vector<MetricsRow> rows;
  /// Seconds per iteration; written to a separate file so metrics CSVs
  /// stay byte-identical across repeated seeded runs.
  std::vector<double> wall_clock;

  void write_csv(const std::string& path) const;
  void write_timings(const std::string& path) const;
  static RunMetrics read_csv(const std::string& path);
};

struct EvalResult {
  double mean = 0;
  double stdev = 0;
};

struct TrainResult {
  TrainConfig config;
  RunMetrics metrics;
  EvalResult final_eval;
  MlpParams actor;
  CriticPair critics;
  ObsNormalizer normalizer;
};

/// Actor network layout implied by a config (flow vector field for rfo,
/// mean/log-std head for shac-gaussian).
MlpConfig actor_net_config(const TrainConfig& cfg);

/// Runs Algorithm-style training (rollout, buffer update, policy loss,
/// actor update, critic epochs) for cfg.iterations iterations.
/// Deterministic given cfg.seed. Dispatches on cfg.algo.
TrainResult train(const TrainConfig& cfg);

/// Frozen-normalizer evaluation over full episodes with seeded per-step
/// noise. Returns mean and sample standard deviation of episode returns.
EvalResult evaluate_policy(const TrainConfig& cfg, const MlpParams& actor,
                           const ObsNormalizer& normalizer, int episodes,
                           unsigned long long seed);

/// Checkpoint packing: actor / critics / optimizer moments / normalizer
/// in one named-tensor container.
ParamSet checkpoint_pack(const MlpParams& actor, const AdamWState& actor_opt,
                         const CriticPair& critics,
                         const ObsNormalizer& normalizer);

struct LoadedCheckpoint {
  MlpParams actor;
  ObsNormalizer normalizer;
};

LoadedCheckpoint checkpoint_unpack(const ParamSet& raw,
                                   const TrainConfig& cfg);

/// Deterministic derived rng stream.
std::mt19937_64 rng_stream(unsigned long long seed, unsigned int id);

}  // namespace rfo

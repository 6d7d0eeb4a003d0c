#pragma once

#include <string>
#include <vector>

namespace rfo {

/// All run hyperparameters. Defaults are the desk-scale training setup;
/// field comments note the larger-scale presets where they differ.
struct TrainConfig {
  std::string env = "point-mass-reach";
  std::string algo = "rfo";  // rfo | shac-gaussian
  int num_envs = 16;
  int episode_len = 100;
  int horizon = 32;
  int iterations = 300;
  unsigned long long seed = 1;

  int flow_steps = 4;
  double clamp_bound = 3.0;
  int chunk = 1;

  double gamma = 0.99;
  double lambda = 0.95;
  int critic_epochs = 16;     // L
  int actor_epochs = 1;       // M
  int critic_minibatches = 4;
  double actor_lr = 2e-3;
  double critic_lr = 5e-4;
  std::string lr_schedule = "linear";  // linear | constant
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;

  double c_past = 0.2;
  double c_uni = 0.2;
  int cfm_batch = 0;  // 0 -> num_envs * horizon
  bool tanh_targets = false;

  std::vector<int> actor_hidden = {64, 64};   // large preset: 400,200,100
  std::vector<int> critic_hidden = {64, 64};  // large preset: 400,200,100

  bool normalize_obs = true;
  bool reward_free = false;

  int eval_episodes = 128;
  int eval_interval = 10;
  int eval_interim_episodes = 16;

  bool diagnostics = false;
  int kl_pairs = 128;
  int kl_samples = 256;
  bool kl_common_rn = true;

  int checkpoint_interval = 50;
  std::string out_dir;  // empty: keep results in memory only

  void validate() const;
};

/// Flat key=value text config, one pair per line, '#' comments. Unknown
/// keys are rejected with the offending line number.
TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text,
                              const std::string& origin = "<string>");
/// Applies a single "key=value" override; throws on unknown key.
void apply_override(TrainConfig& cfg, const std::string& assignment);
/// Fully resolved config, re-parseable by parse_config_text.
std::string serialize_config(const TrainConfig& cfg);

}  // namespace rfo

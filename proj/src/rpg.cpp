#include "rfo/rpg.hpp"

#include "rfo/critic.hpp"

#include <cmath>
#include <stdexcept>

namespace rfo {

SegmentRecord rollout_segment(Tape& t, const SampleFn& sample,
                              const RolloutOptions& opt, BatchedEnv& envs,
                              ObsNormalizer& normalizer,
                              std::mt19937_64& noise_rng,
                              std::mt19937_64& reset_rng) {
  if (opt.horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
  if (opt.chunk < 1 || opt.noise_rows < 1)
    throw std::invalid_argument("rollout: bad chunk/noise configuration");
  const int n = envs.size();
  const int act_dim = envs.spec().act_dim;
  std::normal_distribution<double> gauss(0.0, 1.0);

  SegmentRecord seg;
  seg.horizon = opt.horizon;
  seg.rewards.resize(opt.horizon, n);
  seg.reward_vars.reserve(opt.horizon);
  seg.done.reserve(opt.horizon);
  seg.obs.reserve(opt.horizon + 1);

  Var state = envs.inject_states(t);
  Sampled current{};
  int chunk_left = 0;
  for (int step = 0; step < opt.horizon; ++step) {
    Var raw_obs = envs.env().observe(t, state);
    normalizer.update(t.value(raw_obs));
    Var obs = normalizer.apply(t, raw_obs);
    seg.obs.push_back(t.value(obs));
    if (chunk_left == 0) {
      Mat noise(opt.noise_rows, n);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < opt.noise_rows; ++i) noise(i, j) = gauss(noise_rng);
      current = sample(t, obs, noise);
      chunk_left = opt.chunk;
      seg.chunk_samples.emplace_back(t.value(obs), t.value(current.pre_tanh));
    }
    int offset = (opt.chunk - chunk_left) * act_dim;
    Var action = opt.chunk == 1 ? current.action
                                : t.slice_rows(current.action, offset, act_dim);
    chunk_left -= 1;
    auto res = envs.step(t, state, action);
    Var reward = opt.reward_free ? t.scale(res.reward, 0.0) : res.reward;
    seg.reward_vars.push_back(reward);
    seg.rewards.row(step) = t.value(reward);
    seg.done.push_back(res.done);
    if (res.done) {
      envs.commit(t.value(res.next_state));
      envs.reset_all(reset_rng);
      state = envs.inject_states(t);
      chunk_left = 0;  // stale chunk after reset
    } else {
      state = res.next_state;
    }
  }
  Var raw_terminal = envs.env().observe(t, state);
  seg.terminal_obs = normalizer.apply(t, raw_terminal);
  seg.obs.push_back(t.value(seg.terminal_obs));
  envs.commit(t.value(state));
  return seg;
}

Var surrogate(Tape& t, const SegmentRecord& seg, const BoundMlp& critic1,
              const BoundMlp& critic2, double gamma) {
  if (seg.horizon < 1) throw std::invalid_argument("surrogate: empty segment");
  Var acc = t.scale(seg.reward_vars[0], 1.0);  // exponent 0
  int exponent = seg.done[0] ? 0 : 1;
  for (int step = 1; step < seg.horizon; ++step) {
    acc = t.add(acc, t.scale(seg.reward_vars[step], std::pow(gamma, exponent)));
    exponent = seg.done[step] ? 0 : exponent + 1;
  }
  if (!seg.done.back()) {
    Var v = critic_value_var(t, critic1, critic2, seg.terminal_obs);
    acc = t.add(acc, t.scale(v, std::pow(gamma, exponent)));
  }
  return t.mean(acc);
}

Var policy_loss(Tape& t, Var j_hat, Var loss_past, Var loss_uni,
                const LossWeights& w) {
  if (w.c_past < 0 || w.c_uni < 0)
    throw std::invalid_argument("policy_loss: negative regularizer weight");
  Var loss = t.neg(j_hat);
  loss = t.add(loss, t.scale(loss_past, w.c_past));
  loss = t.add(loss, t.scale(loss_uni, w.c_uni));
  return loss;
}

ActorUpdateStats actor_update(ParamSet& params, ParamSet grads,
                              AdamWState& opt, double lr, double clip_norm) {
  ActorUpdateStats stats;
  stats.grad_norm_pre = global_grad_norm(grads);
  if (!std::isfinite(stats.grad_norm_pre))
    throw std::runtime_error("actor_update: non-finite gradient");
  clip_grad_norm(grads, clip_norm);
  stats.grad_norm_post = global_grad_norm(grads);
  adamw_step(params, grads, opt, lr);
  return stats;
}

}  // namespace rfo

#include "rfo/trainer.hpp"

#include "rfo/checkpoint.hpp"
#include "rfo/diag.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rfo {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

constexpr unsigned kStreamInit = 1;
constexpr unsigned kStreamReset = 2;
constexpr unsigned kStreamNoise = 3;
constexpr unsigned kStreamCfm = 4;
constexpr unsigned kStreamCritic = 5;
constexpr unsigned kStreamDiag = 6;
constexpr unsigned kStreamFinalEval = 999;
constexpr unsigned kStreamInterimEval = 2000;  // + iteration

}  // namespace

std::mt19937_64 rng_stream(unsigned long long seed, unsigned int id) {
  std::seed_seq seq{static_cast<unsigned>(seed & 0xffffffffu),
                    static_cast<unsigned>(seed >> 32), id};
  return std::mt19937_64(seq);
}

void RunMetrics::write_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iter,segment_return,eval_mean,eval_std,j_hat,loss_past,loss_uni,"
        "policy_loss,critic_loss,grad_norm_pre,grad_norm_post,actor_lr,"
        "critic_lr,kl,kl_clamped,past_cfm\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << fmt(r.segment_return) << ',' << fmt(r.eval_mean)
       << ',' << fmt(r.eval_std) << ',' << fmt(r.j_hat) << ','
       << fmt(r.loss_past) << ',' << fmt(r.loss_uni) << ','
       << fmt(r.policy_loss) << ',' << fmt(r.critic_loss) << ','
       << fmt(r.grad_norm_pre) << ',' << fmt(r.grad_norm_post) << ','
       << fmt(r.actor_lr) << ',' << fmt(r.critic_lr) << ',' << fmt(r.kl)
       << ',' << fmt(r.kl_clamped) << ',' << fmt(r.past_cfm) << '\n';
  }
}

void RunMetrics::write_timings(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iter,seconds\n";
  for (size_t i = 0; i < wall_clock.size(); ++i)
    os << i << ',' << fmt(wall_clock[i]) << '\n';
}

RunMetrics RunMetrics::read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  RunMetrics m;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != 16)
      throw std::runtime_error("bad metrics row in " + path);
    MetricsRow r;
    r.iter = static_cast<int>(vals[0]);
    r.segment_return = vals[1];
    r.eval_mean = vals[2];
    r.eval_std = vals[3];
    r.j_hat = vals[4];
    r.loss_past = vals[5];
    r.loss_uni = vals[6];
    r.policy_loss = vals[7];
    r.critic_loss = vals[8];
    r.grad_norm_pre = vals[9];
    r.grad_norm_post = vals[10];
    r.actor_lr = vals[11];
    r.critic_lr = vals[12];
    r.kl = vals[13];
    r.kl_clamped = vals[14];
    r.past_cfm = vals[15];
    m.rows.push_back(r);
  }
  return m;
}

MlpConfig actor_net_config(const TrainConfig& cfg) {
  auto env = make_env(cfg.env, cfg.episode_len);
  const EnvSpec& spec = env->spec();
  MlpConfig mc;
  mc.hidden = cfg.actor_hidden;
  if (cfg.algo == "rfo") {
    mc.in = vf_input_width(spec.act_dim, cfg.chunk, spec.obs_dim);
    mc.out = spec.act_dim * cfg.chunk;
  } else {
    mc.in = spec.obs_dim;
    mc.out = 2 * spec.act_dim;
  }
  return mc;
}

namespace {

// Gaussian baseline head: action = tanh(mu + exp(log_sigma) * eps), with
// log_sigma clamped to a sane range.
Sampled gaussian_sample(Tape& t, const BoundMlp& net, Var obs,
                        const Mat& noise, int act_dim) {
  Var out = mlp_forward(t, net, obs);
  Var mu = t.slice_rows(out, 0, act_dim);
  Var log_sigma = t.clamp(t.slice_rows(out, act_dim, act_dim), -5.0, 2.0);
  Var pre = t.add(mu, t.mul(t.exp_(log_sigma), t.constant(noise)));
  return {pre, t.tanh_(pre)};
}

struct EvalSampler {
  const TrainConfig& cfg;
  const MlpParams& actor;
  int act_dim;
  FlowConfig fcfg;

  // Plain-valued chunk of actions for a batch of normalized observations.
  Mat operator()(const Mat& obs, const Mat& noise) const {
    Tape t;
    BoundMlp b = mlp_bind(t, actor, false);
    Var o = t.constant(obs);
    if (cfg.algo == "rfo") {
      ActionSample s = sample_chunk(t, b, fcfg, o, noise);
      return t.value(s.action);
    }
    Sampled s = gaussian_sample(t, b, o, noise, act_dim);
    return t.value(s.action);
  }
};

}  // namespace

EvalResult evaluate_policy(const TrainConfig& cfg, const MlpParams& actor,
                           const ObsNormalizer& normalizer, int episodes,
                           unsigned long long seed) {
  auto env = std::shared_ptr<const Env>(make_env(cfg.env, cfg.episode_len));
  const EnvSpec& spec = env->spec();
  BatchedEnv envs(env, episodes);
  auto reset_rng = rng_stream(seed, 11);
  auto noise_rng = rng_stream(seed, 12);
  envs.reset_all(reset_rng);
  ObsNormalizer frozen = normalizer;
  frozen.frozen = true;
  const int chunk = cfg.algo == "rfo" ? cfg.chunk : 1;
  const int noise_rows =
      cfg.algo == "rfo" ? spec.act_dim * cfg.chunk : spec.act_dim;
  EvalSampler sampler{cfg, actor, spec.act_dim,
                      FlowConfig{cfg.flow_steps, cfg.clamp_bound, cfg.chunk}};
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::RowVectorXd returns = Eigen::RowVectorXd::Zero(episodes);
  Mat chunk_actions;
  int chunk_left = 0;
  Tape t;
  for (int step = 0; step < cfg.episode_len; ++step) {
    t.clear();
    Var state = envs.inject_states(t);
    Var obs = frozen.apply(t, env->observe(t, state));
    if (chunk_left == 0) {
      Mat noise(noise_rows, episodes);
      for (int j = 0; j < episodes; ++j)
        for (int i = 0; i < noise_rows; ++i) noise(i, j) = gauss(noise_rng);
      chunk_actions = sampler(t.value(obs), noise);
      chunk_left = chunk;
    }
    int offset = (chunk - chunk_left) * spec.act_dim;
    Var action = t.constant(chunk_actions.middleRows(offset, spec.act_dim));
    chunk_left -= 1;
    auto res = envs.step(t, state, action);
    returns += t.value(res.reward).row(0);
    envs.commit(t.value(res.next_state));
  }
  EvalResult out;
  out.mean = returns.mean();
  if (episodes > 1) {
    double var = (returns.array() - out.mean).square().sum() / (episodes - 1);
    out.stdev = std::sqrt(var);
  }
  return out;
}

ParamSet checkpoint_pack(const MlpParams& actor, const AdamWState& actor_opt,
                         const CriticPair& critics,
                         const ObsNormalizer& normalizer) {
  ParamSet out;
  auto add_set = [&](const std::string& prefix, const ParamSet& ps) {
    for (const auto& t : ps.tensors) out.tensors.push_back({prefix + t.name, t.value});
  };
  auto add_moments = [&](const std::string& prefix, const ParamSet& ps,
                         const AdamWState& st) {
    for (size_t i = 0; i < ps.tensors.size(); ++i) {
      out.tensors.push_back({prefix + ".m." + ps.tensors[i].name, st.m[i]});
      out.tensors.push_back({prefix + ".v." + ps.tensors[i].name, st.v[i]});
    }
    out.tensors.push_back(
        {prefix + ".step", Mat::Constant(1, 1, static_cast<double>(st.step))});
  };
  add_set("actor.", actor.ps);
  add_set("criticA.", critics.first.ps);
  add_set("criticB.", critics.second.ps);
  add_moments("opt.actor", actor.ps, actor_opt);
  add_moments("opt.criticA", critics.first.ps, critics.opt_first);
  add_moments("opt.criticB", critics.second.ps, critics.opt_second);
  out.tensors.push_back({"norm.mean", Mat(normalizer.mean)});
  out.tensors.push_back({"norm.m2", Mat(normalizer.m2)});
  out.tensors.push_back(
      {"norm.count", Mat::Constant(1, 1, static_cast<double>(normalizer.count))});
  out.tensors.push_back(
      {"norm.enabled", Mat::Constant(1, 1, normalizer.enabled ? 1.0 : 0.0)});
  return out;
}

LoadedCheckpoint checkpoint_unpack(const ParamSet& raw,
                                   const TrainConfig& cfg) {
  LoadedCheckpoint out;
  auto init_rng = rng_stream(0, 0);
  out.actor = mlp_init(actor_net_config(cfg), init_rng);
  for (auto& t : out.actor.ps.tensors) t.value = raw.at("actor." + t.name);
  out.normalizer.mean = raw.at("norm.mean").col(0);
  out.normalizer.m2 = raw.at("norm.m2").col(0);
  out.normalizer.count = static_cast<long long>(raw.at("norm.count")(0, 0));
  out.normalizer.enabled = raw.at("norm.enabled")(0, 0) != 0.0;
  return out;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const bool is_rfo = cfg.algo == "rfo";
  if (!is_rfo && cfg.chunk != 1)
    throw std::invalid_argument("train: chunking requires algo=rfo");

  auto env = std::shared_ptr<const Env>(make_env(cfg.env, cfg.episode_len));
  const EnvSpec& spec = env->spec();
  BatchedEnv envs(env, cfg.num_envs);

  auto init_rng = rng_stream(cfg.seed, kStreamInit);
  auto reset_rng = rng_stream(cfg.seed, kStreamReset);
  auto noise_rng = rng_stream(cfg.seed, kStreamNoise);
  auto cfm_rng = rng_stream(cfg.seed, kStreamCfm);
  auto critic_rng = rng_stream(cfg.seed, kStreamCritic);
  auto diag_rng = rng_stream(cfg.seed, kStreamDiag);

  ObsNormalizer normalizer;
  normalizer.init(spec.obs_dim);
  normalizer.enabled = cfg.normalize_obs;

  MlpParams actor = mlp_init(actor_net_config(cfg), init_rng);
  if (!is_rfo) {
    // Start the Gaussian head near sigma = e^-1.
    actor.ps.at("out.b").bottomRows(spec.act_dim).setConstant(-1.0);
  }
  AdamWConfig opt_cfg{cfg.adam_beta1, cfg.adam_beta2, 1e-8, cfg.weight_decay};
  AdamWState actor_opt = adamw_init(actor.ps, opt_cfg);
  CriticPair critics =
      critic_init(spec.obs_dim, cfg.critic_hidden, init_rng, opt_cfg);

  long planned = std::max(1, cfg.iterations);
  auto mode = cfg.lr_schedule == "linear" ? LrSchedule::Mode::Linear
                                          : LrSchedule::Mode::Constant;
  LrSchedule actor_sched{cfg.actor_lr, planned, mode};
  LrSchedule critic_sched{cfg.critic_lr, planned, mode};

  FlowConfig fcfg{cfg.flow_steps, cfg.clamp_bound, cfg.chunk};
  const int noise_rows =
      is_rfo ? spec.act_dim * cfg.chunk : spec.act_dim;
  const int cfm_batch =
      cfg.cfm_batch > 0 ? cfg.cfm_batch : cfg.num_envs * cfg.horizon;

  RecentBuffer buffer;
  RolloutStates rollout_states;
  envs.reset_all(reset_rng);

  TrainResult result;
  result.config = cfg;
  Tape tape;
  EvalResult last_eval{};
  bool have_eval = false;

  const bool to_disk = !cfg.out_dir.empty();
  if (to_disk) std::filesystem::create_directories(cfg.out_dir);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    auto t_start = std::chrono::steady_clock::now();
    tape.clear();
    BoundMlp actor_b = mlp_bind(tape, actor, true);
    SampleFn sampler;
    if (is_rfo) {
      sampler = [&](Tape& t, Var obs, const Mat& noise) -> Sampled {
        ActionSample s = sample_chunk(t, actor_b, fcfg, obs, noise);
        return {s.pre_tanh, s.action};
      };
    } else {
      sampler = [&](Tape& t, Var obs, const Mat& noise) -> Sampled {
        return gaussian_sample(t, actor_b, obs, noise, spec.act_dim);
      };
    }
    RolloutOptions ropt{cfg.horizon, noise_rows, cfg.chunk, cfg.reward_free};
    SegmentRecord seg;
    try {
      seg = rollout_segment(tape, sampler, ropt, envs, normalizer, noise_rng,
                            reset_rng);
    } catch (const std::exception& e) {
      throw std::runtime_error("iteration " + std::to_string(iter) +
                               ": rollout failed: " + e.what());
    }

    // Buffer updates (Algorithm line: update D_recent and D_rollout).
    std::vector<std::pair<Vec, Vec>> pairs;
    for (const auto& [obs_batch, pre_batch] : seg.chunk_samples) {
      for (long j = 0; j < obs_batch.cols(); ++j) {
        Vec target = cfg.tanh_targets
                         ? Vec(pre_batch.col(j).array().tanh())
                         : Vec(clamp_pretanh(pre_batch.col(j), cfg.clamp_bound));
        pairs.emplace_back(obs_batch.col(j), std::move(target));
      }
    }
    buffer.rotate(std::move(pairs));
    std::vector<Vec> visited;
    visited.reserve(static_cast<size_t>(cfg.horizon) * cfg.num_envs);
    for (int step = 0; step < cfg.horizon; ++step)
      for (long j = 0; j < seg.obs[step].cols(); ++j)
        visited.push_back(seg.obs[step].col(j));
    rollout_states.replace(std::move(visited));

    Var loss_past_v, loss_uni_v;
    if (is_rfo) {
      loss_past_v = cfm_loss_past(tape, actor_b, fcfg, buffer, cfm_batch, cfm_rng);
      loss_uni_v =
          cfm_loss_uniform(tape, actor_b, fcfg, rollout_states,
                           spec.act_dim * cfg.chunk, cfm_batch, cfm_rng,
                           cfg.tanh_targets);
    } else {
      loss_past_v = tape.constant(0.0);
      loss_uni_v = tape.constant(0.0);
    }
    BoundMlp c1 = mlp_bind(tape, critics.first, false);
    BoundMlp c2 = mlp_bind(tape, critics.second, false);
    Var j_hat = surrogate(tape, seg, c1, c2, cfg.gamma);
    LossWeights weights{is_rfo ? cfg.c_past : 0.0, is_rfo ? cfg.c_uni : 0.0};
    Var loss = policy_loss(tape, j_hat, loss_past_v, loss_uni_v, weights);
    double loss_val = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_val)) {
      if (to_disk) {
        std::ofstream dump(cfg.out_dir + "/abort_iteration.txt");
        dump << "iteration " << iter << "\nloss " << loss_val << "\nj_hat "
             << tape.value(j_hat)(0, 0) << "\nloss_past "
             << tape.value(loss_past_v)(0, 0) << "\nloss_uni "
             << tape.value(loss_uni_v)(0, 0) << "\n";
      }
      throw std::runtime_error("iteration " + std::to_string(iter) +
                               ": non-finite policy loss");
    }
    tape.backward(loss);
    ParamSet grads = mlp_grads(tape, actor_b);

    MlpParams pre_update_actor;
    if (cfg.diagnostics && is_rfo) pre_update_actor = actor;

    double actor_rate = actor_sched.rate(iter);
    ActorUpdateStats stats;
    try {
      stats = actor_update(actor.ps, std::move(grads), actor_opt, actor_rate,
                           cfg.clip_norm);
    } catch (const std::exception& e) {
      throw std::runtime_error("iteration " + std::to_string(iter) + ": " +
                               e.what());
    }

    MetricsRow row;
    row.iter = iter;
    row.segment_return = seg.rewards.colwise().sum().mean();
    row.j_hat = tape.value(j_hat)(0, 0);
    row.loss_past = tape.value(loss_past_v)(0, 0);
    row.loss_uni = tape.value(loss_uni_v)(0, 0);
    row.policy_loss = loss_val;
    row.grad_norm_pre = stats.grad_norm_pre;
    row.grad_norm_post = stats.grad_norm_post;
    row.actor_lr = actor_rate;
    row.critic_lr = critic_sched.rate(iter);

    // Diagnostics use their own rng stream and read-only snapshots, so
    // enabling them never perturbs the training trajectory.
    if (cfg.diagnostics && is_rfo) {
      const auto& cur = buffer.current;
      std::vector<std::pair<Vec, Vec>> kl_pairs;
      if (!cur.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, cur.size() - 1);
        for (int i = 0; i < cfg.kl_pairs; ++i)
          kl_pairs.push_back(cur[pick(diag_rng)]);
        KlOptions kopt{cfg.kl_samples, cfg.kl_common_rn};
        KlEstimate kl = kl_estimate({pre_update_actor}, {actor}, kl_pairs,
                                    kopt, diag_rng);
        row.kl = kl.value;
        row.kl_clamped = kl.exponent_clamped ? 1.0 : 0.0;
      }
      if (!buffer.previous.empty()) {
        const auto& prev = buffer.previous;
        std::vector<std::pair<Vec, Vec>> monitor_pairs;
        std::uniform_int_distribution<std::size_t> pick(0, prev.size() - 1);
        int count = std::min<int>(cfg.kl_pairs, static_cast<int>(prev.size()));
        for (int i = 0; i < count; ++i)
          monitor_pairs.push_back(prev[pick(diag_rng)]);
        row.past_cfm = past_cfm_monitor(actor, monitor_pairs, cfg.kl_samples,
                                        diag_rng);
      }
    }

    // Critic regression toward TD-lambda targets (targets detached).
    Mat obs_all(spec.obs_dim, static_cast<long>(cfg.horizon + 1) * cfg.num_envs);
    for (int s = 0; s <= cfg.horizon; ++s)
      obs_all.middleCols(static_cast<long>(s) * cfg.num_envs, cfg.num_envs) =
          seg.obs[s];
    Mat values_flat = critic_values(critics, obs_all);
    Mat values(cfg.horizon + 1, cfg.num_envs);
    for (int s = 0; s <= cfg.horizon; ++s)
      values.row(s) =
          values_flat.middleCols(static_cast<long>(s) * cfg.num_envs, cfg.num_envs);
    Mat targets = td_lambda_targets(seg.rewards, values, seg.done, cfg.gamma,
                                    cfg.lambda);
    Mat train_obs(spec.obs_dim, static_cast<long>(cfg.horizon) * cfg.num_envs);
    Mat train_targets(1, static_cast<long>(cfg.horizon) * cfg.num_envs);
    for (int s = 0; s < cfg.horizon; ++s) {
      train_obs.middleCols(static_cast<long>(s) * cfg.num_envs, cfg.num_envs) =
          seg.obs[s];
      train_targets.middleCols(static_cast<long>(s) * cfg.num_envs,
                               cfg.num_envs) = targets.row(s);
    }
    row.critic_loss =
        critic_update(critics, train_obs, train_targets, cfg.critic_epochs,
                      cfg.critic_minibatches, critic_sched.rate(iter),
                      critic_rng);

    if ((iter + 1) % cfg.eval_interval == 0 || iter + 1 == cfg.iterations) {
      last_eval = evaluate_policy(cfg, actor, normalizer,
                                  cfg.eval_interim_episodes,
                                  cfg.seed * 1000003ull + kStreamInterimEval + iter);
      have_eval = true;
    }
    if (have_eval) {
      row.eval_mean = last_eval.mean;
      row.eval_std = last_eval.stdev;
    }
    result.metrics.rows.push_back(row);
    auto t_end = std::chrono::steady_clock::now();
    result.metrics.wall_clock.push_back(
        std::chrono::duration<double>(t_end - t_start).count());

    if (to_disk && cfg.checkpoint_interval > 0 &&
        (iter + 1) % cfg.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "/ckpt_%06d.bin", iter + 1);
      save_tensors(cfg.out_dir + name,
                   checkpoint_pack(actor, actor_opt, critics, normalizer));
    }
  }

  result.final_eval = evaluate_policy(cfg, actor, normalizer, cfg.eval_episodes,
                                      cfg.seed * 1000003ull + kStreamFinalEval);
  result.actor = std::move(actor);
  result.critics = std::move(critics);
  result.normalizer = normalizer;

  if (to_disk) {
    result.metrics.write_csv(cfg.out_dir + "/metrics.csv");
    result.metrics.write_timings(cfg.out_dir + "/timings.csv");
    std::ofstream cfg_out(cfg.out_dir + "/resolved_config.cfg");
    cfg_out << serialize_config(cfg);
    std::ofstream eval_out(cfg.out_dir + "/final_eval.csv");
    eval_out << "mean,std,episodes\n"
             << fmt(result.final_eval.mean) << ',' << fmt(result.final_eval.stdev)
             << ',' << cfg.eval_episodes << '\n';
    save_tensors(cfg.out_dir + "/ckpt_final.bin",
                 checkpoint_pack(result.actor, actor_opt, result.critics,
                                 result.normalizer));
  }
  return result;
}

}  // namespace rfo

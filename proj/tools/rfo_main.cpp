#include "CLI11.hpp"

#include "rfo/checkpoint.hpp"
#include "rfo/diag.hpp"
#include "rfo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

using namespace rfo;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string seeds = "";  // "a..b" inclusive, or a single seed
  std::string algo;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides, "config override key=value")
      ->take_all();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seeds", args.seeds, "seed or inclusive range a..b");
  cmd->add_option("--algo", args.algo, "rfo | shac-gaussian");
}

TrainConfig resolve_config(const CommonArgs& args) {
  TrainConfig cfg;
  if (!args.config_path.empty()) cfg = parse_config_file(args.config_path);
  for (const auto& o : args.overrides) apply_override(cfg, o);
  if (!args.algo.empty()) cfg.algo = args.algo;
  if (!args.out_dir.empty()) {
    cfg.out_dir = args.out_dir;
  } else if (cfg.out_dir.empty()) {
    if (const char* env_out = std::getenv("RFO_OUT")) cfg.out_dir = env_out;
  }
  cfg.validate();
  return cfg;
}

std::vector<unsigned long long> resolve_seeds(const CommonArgs& args,
                                              unsigned long long fallback) {
  if (args.seeds.empty()) return {fallback};
  auto dots = args.seeds.find("..");
  if (dots == std::string::npos) return {std::stoull(args.seeds)};
  unsigned long long a = std::stoull(args.seeds.substr(0, dots));
  unsigned long long b = std::stoull(args.seeds.substr(dots + 2));
  if (b < a) throw CLI::ValidationError("--seeds", "range end before start");
  std::vector<unsigned long long> out;
  for (unsigned long long s = a; s <= b; ++s) out.push_back(s);
  return out;
}

std::string seed_dir(const std::string& base, unsigned long long seed) {
  return base + "/seed_" + std::to_string(seed);
}

int cmd_train(const CommonArgs& args) {
  TrainConfig base = resolve_config(args);
  auto seeds = resolve_seeds(args, base.seed);
  double sum = 0;
  for (unsigned long long seed : seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    if (!base.out_dir.empty() && seeds.size() > 1)
      cfg.out_dir = seed_dir(base.out_dir, seed);
    TrainResult res = train(cfg);
    sum += res.final_eval.mean;
    std::printf("seed %llu: final eval %.4f +- %.4f over %d episodes\n", seed,
                res.final_eval.mean, res.final_eval.stdev, cfg.eval_episodes);
  }
  if (seeds.size() > 1)
    std::printf("mean over %zu seeds: %.4f\n", seeds.size(),
                sum / static_cast<double>(seeds.size()));
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             int episodes, unsigned long long eval_seed) {
  TrainConfig cfg = resolve_config(args);
  ParamSet raw = load_tensors(checkpoint);
  LoadedCheckpoint loaded = checkpoint_unpack(raw, cfg);
  EvalResult res =
      evaluate_policy(cfg, loaded.actor, loaded.normalizer, episodes, eval_seed);
  std::printf("eval mean %.6f std %.6f episodes %d\n", res.mean, res.stdev,
              episodes);
  return 0;
}

// Compares the surrogate gradient against central differences on a small
// dedicated setup; any relative error above the tolerance fails the run.
int cmd_gradcheck(const CommonArgs& args, int params_to_check, double tol) {
  TrainConfig cfg = resolve_config(args);
  cfg.num_envs = 2;
  cfg.horizon = 8;
  cfg.flow_steps = 4;
  cfg.normalize_obs = false;

  auto env = std::shared_ptr<const Env>(make_env(cfg.env, cfg.episode_len));
  const EnvSpec& spec = env->spec();
  auto init_rng = rng_stream(cfg.seed, 1);
  MlpParams actor = mlp_init(actor_net_config(cfg), init_rng);
  MlpParams critic = mlp_init({spec.obs_dim, 1, cfg.critic_hidden}, init_rng);
  FlowConfig fcfg{cfg.flow_steps, cfg.clamp_bound, cfg.chunk};
  const int noise_rows = spec.act_dim * cfg.chunk;

  auto j_hat = [&](bool differentiable, ParamSet* grads_out) {
    BatchedEnv envs(env, cfg.num_envs);
    auto reset_rng = rng_stream(cfg.seed, 2);
    auto noise_rng = rng_stream(cfg.seed, 3);
    envs.reset_all(reset_rng);
    ObsNormalizer norm;
    norm.enabled = false;
    norm.init(spec.obs_dim);
    Tape t;
    BoundMlp actor_b = mlp_bind(t, actor, differentiable);
    SampleFn sample = [&](Tape& tape, Var obs, const Mat& noise) -> Sampled {
      ActionSample s = sample_chunk(tape, actor_b, fcfg, obs, noise);
      return {s.pre_tanh, s.action};
    };
    RolloutOptions opt{cfg.horizon, noise_rows, cfg.chunk, false};
    SegmentRecord seg =
        rollout_segment(t, sample, opt, envs, norm, noise_rng, reset_rng);
    BoundMlp c1 = mlp_bind(t, critic, false);
    BoundMlp c2 = mlp_bind(t, critic, false);
    Var j = surrogate(t, seg, c1, c2, cfg.gamma);
    if (grads_out) {
      t.backward(j);
      *grads_out = mlp_grads(t, actor_b);
    }
    return t.value(j)(0, 0);
  };

  ParamSet analytic;
  j_hat(true, &analytic);

  auto check_rng = rng_stream(cfg.seed, 7);
  const double eps = 1e-5;
  double worst = 0;
  std::printf("%-22s %5s %14s %14s %10s\n", "tensor", "index", "analytic",
              "central diff", "rel err");
  for (int k = 0; k < params_to_check; ++k) {
    size_t ti = check_rng() % actor.ps.tensors.size();
    Mat& w = actor.ps.tensors[ti].value;
    long idx = static_cast<long>(check_rng() % w.size());
    double orig = w(idx);
    w(idx) = orig + eps;
    double fp = j_hat(false, nullptr);
    w(idx) = orig - eps;
    double fm = j_hat(false, nullptr);
    w(idx) = orig;
    double cd = (fp - fm) / (2 * eps);
    double an = analytic.tensors[ti].value(idx);
    double err = std::abs(an - cd) / (std::abs(cd) + 1e-8);
    worst = std::max(worst, err);
    std::printf("%-22s %5ld %14.6e %14.6e %10.2e\n",
                actor.ps.tensors[ti].name.c_str(), idx, an, cd, err);
  }
  std::printf("worst relative error: %.3e (tolerance %.1e)\n", worst, tol);
  return worst < tol ? 0 : 1;
}

int cmd_ablate(const CommonArgs& args, std::vector<double> c_past_grid,
               std::vector<double> c_uni_grid, std::vector<int> k_grid,
               std::vector<int> chunk_grid) {
  TrainConfig base = resolve_config(args);
  auto seeds = resolve_seeds(args, base.seed);
  if (c_past_grid.empty()) c_past_grid = {base.c_past};
  if (c_uni_grid.empty()) c_uni_grid = {base.c_uni};
  if (k_grid.empty()) k_grid = {base.flow_steps};
  if (chunk_grid.empty()) chunk_grid = {base.chunk};

  std::ofstream summary;
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    summary.open(base.out_dir + "/ablation.csv");
    summary << "c_past,c_uni,flow_steps,chunk,seed,final_mean,final_std\n";
  }
  for (double cp : c_past_grid)
    for (double cu : c_uni_grid)
      for (int k : k_grid)
        for (int c : chunk_grid) {
          double mean_acc = 0;
          for (unsigned long long seed : seeds) {
            TrainConfig cfg = base;
            cfg.c_past = cp;
            cfg.c_uni = cu;
            cfg.flow_steps = k;
            cfg.chunk = c;
            cfg.seed = seed;
            if (!base.out_dir.empty()) {
              char cell[128];
              std::snprintf(cell, sizeof(cell),
                            "/cp%g_cu%g_K%d_C%d_seed%llu", cp, cu, k, c, seed);
              cfg.out_dir = base.out_dir + cell;
            } else {
              cfg.out_dir.clear();
            }
            TrainResult res = train(cfg);
            mean_acc += res.final_eval.mean;
            if (summary.is_open())
              summary << cp << ',' << cu << ',' << k << ',' << c << ',' << seed
                      << ',' << res.final_eval.mean << ','
                      << res.final_eval.stdev << '\n';
          }
          std::printf("c_past=%g c_uni=%g K=%d C=%d: mean final eval %.4f\n",
                      cp, cu, k, c,
                      mean_acc / static_cast<double>(seeds.size()));
        }
  return 0;
}

int cmd_kl_monitor(const CommonArgs& args) {
  TrainConfig cfg = resolve_config(args);
  cfg.diagnostics = true;
  TrainResult res = train(cfg);
  std::printf("iter,kl,kl_clamped,past_cfm\n");
  for (const auto& row : res.metrics.rows)
    std::printf("%d,%.6g,%g,%.6g\n", row.iter, row.kl, row.kl_clamped,
                row.past_cfm);
  double max_kl = 0;
  bool any_clamped = false, all_finite = true;
  for (const auto& row : res.metrics.rows) {
    max_kl = std::max(max_kl, row.kl);
    any_clamped |= row.kl_clamped != 0.0;
    all_finite &= std::isfinite(row.kl);
  }
  std::printf("# max kl %.6g, clamped %s, finite %s\n", max_kl,
              any_clamped ? "yes" : "no", all_finite ? "yes" : "no");
  return all_finite ? 0 : 1;
}

// ---- plotting ----

struct Series {
  std::vector<double> x, mean, lo, hi;
};

std::vector<double> moving_average(const std::vector<double>& v, int window) {
  std::vector<double> out(v.size());
  double acc = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<size_t>(window)) acc -= v[i - window];
    out[i] = acc / std::min<double>(window, static_cast<double>(i + 1));
  }
  return out;
}

Series collect(const std::vector<std::string>& files, const std::string& column,
               int smooth) {
  std::vector<std::vector<double>> runs;
  size_t len = SIZE_MAX;
  for (const auto& f : files) {
    RunMetrics m = RunMetrics::read_csv(f);
    std::vector<double> col;
    for (const auto& r : m.rows) {
      double v = column == "eval_mean"        ? r.eval_mean
                 : column == "segment_return" ? r.segment_return
                 : column == "j_hat"          ? r.j_hat
                 : column == "kl"             ? r.kl
                 : column == "past_cfm"       ? r.past_cfm
                 : column == "loss_past"      ? r.loss_past
                 : column == "loss_uni"       ? r.loss_uni
                                              : r.policy_loss;
      col.push_back(v);
    }
    if (smooth > 1) col = moving_average(col, smooth);
    len = std::min(len, col.size());
    runs.push_back(std::move(col));
  }
  Series s;
  for (size_t i = 0; i < len; ++i) {
    double mean = 0;
    for (const auto& r : runs) mean += r[i];
    mean /= static_cast<double>(runs.size());
    double var = 0;
    for (const auto& r : runs) var += (r[i] - mean) * (r[i] - mean);
    double sd = runs.size() > 1 ? std::sqrt(var / (runs.size() - 1)) : 0.0;
    s.x.push_back(static_cast<double>(i));
    s.mean.push_back(mean);
    s.lo.push_back(mean - sd);
    s.hi.push_back(mean + sd);
  }
  return s;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& column,
             const std::string& out_path, int smooth) {
  if (files.empty()) {
    std::fprintf(stderr, "plot: no metrics files given\n");
    return 1;
  }
  Series s = collect(files, column, smooth);
  if (s.x.empty()) {
    std::fprintf(stderr, "plot: no rows in input\n");
    return 1;
  }
  const double w = 860, h = 480, ml = 70, mr = 20, mt = 30, mb = 50;
  double ymin = 1e300, ymax = -1e300;
  for (size_t i = 0; i < s.x.size(); ++i) {
    ymin = std::min(ymin, s.lo[i]);
    ymax = std::max(ymax, s.hi[i]);
  }
  if (ymax <= ymin) ymax = ymin + 1;
  double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  double xmax = s.x.back() > 0 ? s.x.back() : 1;
  auto X = [&](double v) { return ml + v / xmax * (w - ml - mr); };
  auto Y = [&](double v) {
    return h - mb - (v - ymin) / (ymax - ymin) * (h - mt - mb);
  };

  std::ofstream os(out_path);
  if (!os) {
    std::fprintf(stderr, "plot: cannot write %s\n", out_path.c_str());
    return 1;
  }
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
     << h << "' viewBox='0 0 " << w << " " << h << "'>\n"
     << "<rect width='100%' height='100%' fill='white'/>\n";
  // axes and ticks
  os << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr
     << "' y2='" << h - mb << "' stroke='black'/>\n"
     << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
     << h - mb << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 5; ++tick) {
    double xv = xmax * tick / 5.0, yv = ymin + (ymax - ymin) * tick / 5.0;
    os << "<text x='" << X(xv) << "' y='" << h - mb + 18
       << "' font-size='11' text-anchor='middle'>" << static_cast<long>(xv)
       << "</text>\n"
       << "<text x='" << ml - 8 << "' y='" << Y(yv) + 4
       << "' font-size='11' text-anchor='end'>";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", yv);
    os << buf << "</text>\n";
  }
  os << "<text x='" << (ml + w - mr) / 2 << "' y='" << h - 12
     << "' font-size='13' text-anchor='middle'>iteration</text>\n"
     << "<text x='" << (ml + w - mr) / 2 << "' y='" << mt - 10
     << "' font-size='13' text-anchor='middle'>" << column << " ("
     << files.size() << " runs)</text>\n";
  // std band
  if (files.size() > 1) {
    os << "<path d='M";
    for (size_t i = 0; i < s.x.size(); ++i)
      os << X(s.x[i]) << ' ' << Y(s.hi[i]) << ' ';
    for (size_t i = s.x.size(); i-- > 0;)
      os << X(s.x[i]) << ' ' << Y(s.lo[i]) << ' ';
    os << "Z' fill='#4477aa' opacity='0.25' stroke='none'/>\n";
  }
  // mean line
  os << "<polyline fill='none' stroke='#4477aa' stroke-width='1.8' points='";
  for (size_t i = 0; i < s.x.size(); ++i)
    os << X(s.x[i]) << ',' << Y(s.mean[i]) << ' ';
  os << "'/>\n</svg>\n";
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-policy training tool"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, grad_args, ablate_args, kl_args;

  CLI::App* train_cmd = app.add_subcommand("train", "train a policy");
  add_common(train_cmd, train_args);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  std::string checkpoint;
  int eval_episodes = 128;
  unsigned long long eval_seed = 999;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--episodes", eval_episodes, "episode count");
  eval_cmd->add_option("--eval-seed", eval_seed, "evaluation seed");

  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(grad_cmd, grad_args);
  int grad_params = 20;
  double grad_tol = 1e-3;
  grad_cmd->add_option("--params", grad_params, "parameters to probe");
  grad_cmd->add_option("--tol", grad_tol, "relative error tolerance");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "grid ablations");
  add_common(ablate_cmd, ablate_args);
  std::vector<double> grid_cp, grid_cu;
  std::vector<int> grid_k, grid_chunk;
  ablate_cmd->add_option("--c-past", grid_cp, "c_past grid")->take_all();
  ablate_cmd->add_option("--c-uni", grid_cu, "c_uni grid")->take_all();
  ablate_cmd->add_option("--flow-steps", grid_k, "K grid")->take_all();
  ablate_cmd->add_option("--chunk", grid_chunk, "chunk grid")->take_all();

  CLI::App* kl_cmd =
      app.add_subcommand("kl-monitor", "train with per-update KL logging");
  add_common(kl_cmd, kl_args);

  CLI::App* plot_cmd = app.add_subcommand("plot", "render metrics CSVs to SVG");
  std::vector<std::string> plot_files;
  std::string plot_column = "eval_mean", plot_out = "plot.svg";
  int plot_smooth = 1;
  plot_cmd->add_option("files", plot_files, "metrics.csv files")->required();
  plot_cmd->add_option("--column", plot_column, "metric column");
  plot_cmd->add_option("--out", plot_out, "output SVG path");
  plot_cmd->add_option("--smooth", plot_smooth, "moving average window");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed())
      return cmd_eval(eval_args, checkpoint, eval_episodes, eval_seed);
    if (grad_cmd->parsed())
      return cmd_gradcheck(grad_args, grad_params, grad_tol);
    if (ablate_cmd->parsed())
      return cmd_ablate(ablate_args, grid_cp, grid_cu, grid_k, grid_chunk);
    if (kl_cmd->parsed()) return cmd_kl_monitor(kl_args);
    if (plot_cmd->parsed())
      return cmd_plot(plot_files, plot_column, plot_out, plot_smooth);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

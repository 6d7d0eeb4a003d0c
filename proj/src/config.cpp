#include "rfo/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace rfo {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("expected boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto str = [&](const std::string& key, std::string TrainConfig::* p) {
      f[key] = {[p](TrainConfig& c, const std::string& v) { c.*p = v; },
                [p](const TrainConfig& c) { return c.*p; }};
    };
    auto ints = [&](const std::string& key, int TrainConfig::* p) {
      f[key] = {[p](TrainConfig& c, const std::string& v) { c.*p = std::stoi(v); },
                [p](const TrainConfig& c) { return std::to_string(c.*p); }};
    };
    auto dbl = [&](const std::string& key, double TrainConfig::* p) {
      f[key] = {[p](TrainConfig& c, const std::string& v) { c.*p = std::stod(v); },
                [p](const TrainConfig& c) { return fmt_double(c.*p); }};
    };
    auto boolean = [&](const std::string& key, bool TrainConfig::* p) {
      f[key] = {[p](TrainConfig& c, const std::string& v) { c.*p = parse_bool(v); },
                [p](const TrainConfig& c) { return c.*p ? "true" : "false"; }};
    };
    auto int_list = [&](const std::string& key, std::vector<int> TrainConfig::* p) {
      f[key] = {[p](TrainConfig& c, const std::string& v) { c.*p = parse_int_list(v); },
                [p](const TrainConfig& c) { return fmt_int_list(c.*p); }};
    };
    str("env", &TrainConfig::env);
    str("algo", &TrainConfig::algo);
    ints("num_envs", &TrainConfig::num_envs);
    ints("episode_len", &TrainConfig::episode_len);
    ints("horizon", &TrainConfig::horizon);
    ints("iterations", &TrainConfig::iterations);
    f["seed"] = {[](TrainConfig& c, const std::string& v) { c.seed = std::stoull(v); },
                 [](const TrainConfig& c) { return std::to_string(c.seed); }};
    ints("flow_steps", &TrainConfig::flow_steps);
    dbl("clamp_bound", &TrainConfig::clamp_bound);
    ints("chunk", &TrainConfig::chunk);
    dbl("gamma", &TrainConfig::gamma);
    dbl("lambda", &TrainConfig::lambda);
    ints("critic_epochs", &TrainConfig::critic_epochs);
    ints("actor_epochs", &TrainConfig::actor_epochs);
    ints("critic_minibatches", &TrainConfig::critic_minibatches);
    dbl("actor_lr", &TrainConfig::actor_lr);
    dbl("critic_lr", &TrainConfig::critic_lr);
    str("lr_schedule", &TrainConfig::lr_schedule);
    dbl("adam_beta1", &TrainConfig::adam_beta1);
    dbl("adam_beta2", &TrainConfig::adam_beta2);
    dbl("weight_decay", &TrainConfig::weight_decay);
    dbl("clip_norm", &TrainConfig::clip_norm);
    dbl("c_past", &TrainConfig::c_past);
    dbl("c_uni", &TrainConfig::c_uni);
    ints("cfm_batch", &TrainConfig::cfm_batch);
    boolean("tanh_targets", &TrainConfig::tanh_targets);
    int_list("actor_hidden", &TrainConfig::actor_hidden);
    int_list("critic_hidden", &TrainConfig::critic_hidden);
    boolean("normalize_obs", &TrainConfig::normalize_obs);
    boolean("reward_free", &TrainConfig::reward_free);
    ints("eval_episodes", &TrainConfig::eval_episodes);
    ints("eval_interval", &TrainConfig::eval_interval);
    ints("eval_interim_episodes", &TrainConfig::eval_interim_episodes);
    boolean("diagnostics", &TrainConfig::diagnostics);
    ints("kl_pairs", &TrainConfig::kl_pairs);
    ints("kl_samples", &TrainConfig::kl_samples);
    boolean("kl_common_rn", &TrainConfig::kl_common_rn);
    ints("checkpoint_interval", &TrainConfig::checkpoint_interval);
    str("out_dir", &TrainConfig::out_dir);
    return f;
  }();
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  require(algo == "rfo" || algo == "shac-gaussian", "algo must be rfo or shac-gaussian");
  require(lr_schedule == "linear" || lr_schedule == "constant",
          "lr_schedule must be linear or constant");
  require(num_envs >= 1, "num_envs must be >= 1");
  require(horizon >= 1, "horizon must be >= 1");
  require(iterations >= 0, "iterations must be >= 0");
  require(flow_steps >= 1, "flow_steps must be >= 1");
  require(chunk >= 1, "chunk must be >= 1");
  require(clamp_bound > 0, "clamp_bound must be > 0");
  require(gamma >= 0 && gamma <= 1, "gamma must be in [0,1]");
  require(lambda >= 0 && lambda <= 1, "lambda must be in [0,1]");
  require(actor_lr >= 0 && critic_lr >= 0, "learning rates must be >= 0");
  require(c_past >= 0 && c_uni >= 0, "regularizer weights must be >= 0");
  require(critic_epochs >= 1 && critic_minibatches >= 1, "critic schedule invalid");
  require(actor_epochs == 1, "actor_epochs other than 1 is not supported");
  require(!actor_hidden.empty() && !critic_hidden.empty(), "hidden sizes empty");
  require(eval_episodes >= 1 && eval_interim_episodes >= 1, "eval episodes must be >= 1");
  require(eval_interval >= 1, "eval_interval must be >= 1");
}

TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = fields().find(key);
    if (it == fields().end())
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
    try {
      it->second.set(cfg, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " +
                                  key + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be key=value: " + assignment);
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  auto it = fields().find(key);
  if (it == fields().end())
    throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields())
    out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace rfo

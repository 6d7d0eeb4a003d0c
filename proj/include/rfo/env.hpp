#pragma once

#include "rfo/tape.hpp"

#include <memory>
#include <random>
#include <string>
#include <utility>

namespace rfo {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int obs_dim = 0;
  int act_dim = 0;
  int episode_len = 100;
  double dt = 0.05;
  // Action bounds are the hypercube [-1,1]^act_dim for every environment.
};

/// Deterministic differentiable dynamics, batched over columns.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  /// Draws n initial states from rho_0. state_dim x n.
  virtual Mat sample_initial(int n, std::mt19937_64& rng) const = 0;
  virtual Var observe(Tape& t, Var state) const = 0;
  /// (next_state, reward 1 x n). Both live on the tape.
  virtual std::pair<Var, Var> dynamics(Tape& t, Var state, Var action) const = 0;
};

/// Known names: point-mass-reach, double-integrator, pendulum-swingup.
std::unique_ptr<Env> make_env(const std::string& name, int episode_len = 100);

/// N parallel instances stepping in lockstep; episodes end only at
/// episode_len (no early termination).
class BatchedEnv {
 public:
  BatchedEnv(std::shared_ptr<const Env> env, int n);

  const Env& env() const { return *env_; }
  const EnvSpec& spec() const { return env_->spec(); }
  int size() const { return n_; }
  const Mat& states() const { return states_; }
  int steps_into_episode() const { return step_count_; }

  void reset_all(std::mt19937_64& rng);
  /// Current states as a tape constant (segment root; no grads past it).
  Var inject_states(Tape& t) const;

  struct StepResult {
    Var next_state;
    Var reward;
    bool done;  // uniform across instances
  };
  /// Validates action bounds, advances the lockstep counter. Does not
  /// mutate stored states; call commit()/handle resets in the rollout.
  StepResult step(Tape& t, Var states, Var actions);

  /// Stores concrete end-of-segment states for the next segment.
  void commit(const Mat& states_end) { states_ = states_end; }
  void set_step_count(int c) { step_count_ = c; }

 private:
  std::shared_ptr<const Env> env_;
  int n_;
  Mat states_;
  int step_count_ = 0;
};

/// Running per-dimension mean/std (Welford), applied as a tape-side affine
/// map so gradients flow through the observation.
struct ObsNormalizer {
  bool enabled = true;
  bool frozen = false;
  long long count = 0;
  Vec mean;
  Vec m2;

  void init(int dim);
  void update(const Mat& obs_batch);
  Var apply(Tape& t, Var obs) const;
  Vec inv_std() const;
};

/// x - 2*pi*round(x / 2*pi), with the offset treated as constant so the
/// gradient is 1 almost everywhere.
Var wrap_angle(Tape& t, Var x);

}  // namespace rfo

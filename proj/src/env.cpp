#include "rfo/env.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rfo {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// state (pos in R^2, vel in R^2); pos' = pos + dt*vel, vel' = vel + dt*2a;
/// reward -|pos - goal|^2 - 0.01|a|^2, goal at the origin;
/// rho_0: pos uniform [-1,1]^2, vel 0.
class PointMassReach final : public Env {
 public:
  explicit PointMassReach(int episode_len) {
    spec_ = {"point-mass-reach", 4, 4, 2, episode_len, 0.05};
  }
  const EnvSpec& spec() const override { return spec_; }

  Mat sample_initial(int n, std::mt19937_64& rng) const override {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Mat s = Mat::Zero(4, n);
    for (int j = 0; j < n; ++j) {
      s(0, j) = u(rng);
      s(1, j) = u(rng);
    }
    return s;
  }

  Var observe(Tape&, Var state) const override { return state; }

  std::pair<Var, Var> dynamics(Tape& t, Var state, Var action) const override {
    Var pos = t.slice_rows(state, 0, 2);
    Var vel = t.slice_rows(state, 2, 2);
    Var pos_next = pos + spec_.dt * vel;
    Var vel_next = vel + (2.0 * spec_.dt) * action;
    std::array<Var, 2> parts{pos_next, vel_next};
    Var next = t.concat_rows(parts);
    Var reward = -t.colwise_sqnorm(pos_next) - 0.01 * t.colwise_sqnorm(action);
    return {next, reward};
  }

 private:
  EnvSpec spec_;
};

/// 1-D point mass: state (x, v); reward -x^2 - 0.1 v^2 - 0.01 a^2.
class DoubleIntegrator final : public Env {
 public:
  explicit DoubleIntegrator(int episode_len) {
    spec_ = {"double-integrator", 2, 2, 1, episode_len, 0.05};
  }
  const EnvSpec& spec() const override { return spec_; }

  Mat sample_initial(int n, std::mt19937_64& rng) const override {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Mat s = Mat::Zero(2, n);
    for (int j = 0; j < n; ++j) s(0, j) = u(rng);
    return s;
  }

  Var observe(Tape&, Var state) const override { return state; }

  std::pair<Var, Var> dynamics(Tape& t, Var state, Var action) const override {
    Var x = t.slice_rows(state, 0, 1);
    Var v = t.slice_rows(state, 1, 1);
    Var x_next = x + spec_.dt * v;
    Var v_next = v + (2.0 * spec_.dt) * action;
    std::array<Var, 2> parts{x_next, v_next};
    Var next = t.concat_rows(parts);
    Var reward = -t.colwise_sqnorm(x_next) - 0.1 * t.colwise_sqnorm(v_next) -
                 0.01 * t.colwise_sqnorm(action);
    return {next, reward};
  }

 private:
  EnvSpec spec_;
};

/// state (theta, omega), theta = 0 hanging down, upright at +-pi;
/// omega' = omega + dt*(-10 sin theta + 4 a - 0.05 omega),
/// theta' = wrap(theta + dt*omega');
/// reward -(angle to upright)^2 - 0.1 omega^2 - 0.001 a^2;
/// obs (cos theta, sin theta, omega);
/// rho_0: theta uniform [-pi, pi), omega uniform [-1, 1].
class PendulumSwingup final : public Env {
 public:
  explicit PendulumSwingup(int episode_len) {
    spec_ = {"pendulum-swingup", 2, 3, 1, episode_len, 0.05};
  }
  const EnvSpec& spec() const override { return spec_; }

  Mat sample_initial(int n, std::mt19937_64& rng) const override {
    // Start near the hanging rest state. The torque limit (4) is below
    // peak gravity (10), so reaching upright requires energy pumping and
    // the task genuinely exercises exploration.
    std::uniform_real_distribution<double> utheta(-0.05, 0.05);
    std::uniform_real_distribution<double> uomega(-0.05, 0.05);
    Mat s(2, n);
    for (int j = 0; j < n; ++j) {
      s(0, j) = utheta(rng);
      s(1, j) = uomega(rng);
    }
    return s;
  }

  Var observe(Tape& t, Var state) const override {
    Var theta = t.slice_rows(state, 0, 1);
    Var omega = t.slice_rows(state, 1, 1);
    std::array<Var, 3> parts{t.cos_(theta), t.sin_(theta), omega};
    return t.concat_rows(parts);
  }

  std::pair<Var, Var> dynamics(Tape& t, Var state, Var action) const override {
    Var theta = t.slice_rows(state, 0, 1);
    Var omega = t.slice_rows(state, 1, 1);
    Var accel = -10.0 * t.sin_(theta) + 4.0 * action - 0.05 * omega;
    Var omega_next = omega + spec_.dt * accel;
    Var theta_next = wrap_angle(t, theta + spec_.dt * omega_next);
    std::array<Var, 2> parts{theta_next, omega_next};
    Var next = t.concat_rows(parts);
    // Signed angular distance from upright, wrapped into (-pi, pi].
    Var to_upright = wrap_angle(t, theta_next + std::numbers::pi);
    Var reward = -t.colwise_sqnorm(to_upright) -
                 0.1 * t.colwise_sqnorm(omega_next) -
                 0.001 * t.colwise_sqnorm(action);
    return {next, reward};
  }

 private:
  EnvSpec spec_;
};

}  // namespace

Var wrap_angle(Tape& t, Var x) {
  const Mat& v = t.value(x);
  Mat offset(v.rows(), v.cols());
  for (long j = 0; j < v.cols(); ++j)
    for (long i = 0; i < v.rows(); ++i)
      offset(i, j) = kTwoPi * std::round(v(i, j) / kTwoPi);
  return t.sub(x, t.constant(std::move(offset)));
}

std::unique_ptr<Env> make_env(const std::string& name, int episode_len) {
  if (episode_len < 1) throw std::invalid_argument("episode_len must be >= 1");
  if (name == "point-mass-reach")
    return std::make_unique<PointMassReach>(episode_len);
  if (name == "double-integrator")
    return std::make_unique<DoubleIntegrator>(episode_len);
  if (name == "pendulum-swingup")
    return std::make_unique<PendulumSwingup>(episode_len);
  throw std::invalid_argument("unknown environment: " + name);
}

BatchedEnv::BatchedEnv(std::shared_ptr<const Env> env, int n)
    : env_(std::move(env)), n_(n) {
  if (n_ < 1) throw std::invalid_argument("BatchedEnv: n must be >= 1");
  states_ = Mat::Zero(spec().state_dim, n_);
}

void BatchedEnv::reset_all(std::mt19937_64& rng) {
  states_ = env_->sample_initial(n_, rng);
  step_count_ = 0;
}

Var BatchedEnv::inject_states(Tape& t) const { return t.constant(states_); }

BatchedEnv::StepResult BatchedEnv::step(Tape& t, Var states, Var actions) {
  const Mat& a = t.value(actions);
  if (a.rows() != spec().act_dim || a.cols() != n_)
    throw std::invalid_argument("BatchedEnv::step: bad action shape");
  if (a.array().abs().maxCoeff() > 1.0 + 1e-9)
    throw std::invalid_argument("BatchedEnv::step: action out of [-1,1]");
  auto [next, reward] = env_->dynamics(t, states, actions);
  step_count_ += 1;
  bool done = step_count_ >= spec().episode_len;
  return {next, reward, done};
}

void ObsNormalizer::init(int dim) {
  mean = Vec::Zero(dim);
  m2 = Vec::Zero(dim);
  count = 0;
}

void ObsNormalizer::update(const Mat& obs_batch) {
  if (!enabled || frozen) return;
  for (long j = 0; j < obs_batch.cols(); ++j) {
    count += 1;
    Vec delta = obs_batch.col(j) - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta.cwiseProduct(obs_batch.col(j) - mean);
  }
}

Vec ObsNormalizer::inv_std() const {
  if (count < 2) return Vec::Ones(mean.size());
  Vec var = m2 / static_cast<double>(count);
  return (var.array() + 1e-8).sqrt().max(1e-6).inverse();
}

Var ObsNormalizer::apply(Tape& t, Var obs) const {
  if (!enabled || count < 2) return obs;
  Var mu = t.constant(Mat(mean));
  Var inv = t.constant(Mat(inv_std()));
  return t.mul(t.sub(obs, mu), inv);
}

}  // namespace rfo

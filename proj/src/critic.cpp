#include "rfo/critic.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace rfo {

CriticPair critic_init(int obs_dim, const std::vector<int>& hidden,
                       std::mt19937_64& rng, const AdamWConfig& opt_cfg) {
  CriticPair pair;
  MlpConfig cfg{obs_dim, 1, hidden};
  pair.first = mlp_init(cfg, rng);
  pair.second = mlp_init(cfg, rng);
  pair.opt_first = adamw_init(pair.first.ps, opt_cfg);
  pair.opt_second = adamw_init(pair.second.ps, opt_cfg);
  return pair;
}

Mat critic_values(const CriticPair& pair, const Mat& obs) {
  Tape t;
  Var o = t.constant(obs);
  BoundMlp b1 = mlp_bind(t, pair.first, false);
  BoundMlp b2 = mlp_bind(t, pair.second, false);
  Var v = critic_value_var(t, b1, b2, o);
  return t.value(v);
}

Var critic_value_var(Tape& t, const BoundMlp& c1, const BoundMlp& c2, Var obs) {
  Var v1 = mlp_forward(t, c1, obs);
  Var v2 = mlp_forward(t, c2, obs);
  return t.scale(t.add(v1, v2), 0.5);
}

Mat td_lambda_targets(const Mat& rewards, const Mat& values,
                      const std::vector<bool>& done, double gamma,
                      double lambda) {
  long h = rewards.rows(), n = rewards.cols();
  if (values.rows() != h + 1 || values.cols() != n)
    throw std::invalid_argument("td_lambda_targets: values must be (H+1) x N");
  if (static_cast<long>(done.size()) != h)
    throw std::invalid_argument("td_lambda_targets: done size mismatch");
  Mat y(h, n);
  Eigen::RowVectorXd next = values.row(h);  // y_H = V(s_H)
  for (long t = h - 1; t >= 0; --t) {
    if (done[t]) {
      y.row(t) = rewards.row(t);
    } else {
      y.row(t) = rewards.row(t) +
                 gamma * ((1.0 - lambda) * values.row(t + 1) + lambda * next);
    }
    next = y.row(t);
  }
  if (!y.allFinite())
    throw std::runtime_error("td_lambda_targets: non-finite target");
  return y;
}

double critic_update(CriticPair& pair, const Mat& obs, const Mat& targets,
                     int epochs, int minibatches, double lr,
                     std::mt19937_64& rng) {
  long m = obs.cols();
  if (targets.cols() != m || targets.rows() != 1)
    throw std::invalid_argument("critic_update: targets must be 1 x M");
  if (epochs < 1 || minibatches < 1)
    throw std::invalid_argument("critic_update: bad epoch/minibatch count");
  minibatches = static_cast<int>(std::min<long>(minibatches, m));
  std::vector<long> order(m);
  std::iota(order.begin(), order.end(), 0);
  Tape t;
  double loss_sum = 0;
  long steps = 0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    long base = 0;
    for (int mb = 0; mb < minibatches; ++mb) {
      long count = m / minibatches + (mb < m % minibatches ? 1 : 0);
      Mat ob(obs.rows(), count), tg(1, count);
      for (long j = 0; j < count; ++j) {
        ob.col(j) = obs.col(order[base + j]);
        tg(0, j) = targets(0, order[base + j]);
      }
      base += count;
      t.clear();
      Var o = t.constant(std::move(ob));
      Var y = t.constant(std::move(tg));
      BoundMlp b1 = mlp_bind(t, pair.first, true);
      BoundMlp b2 = mlp_bind(t, pair.second, true);
      Var mse1 = t.mean(t.square(t.sub(mlp_forward(t, b1, o), y)));
      Var mse2 = t.mean(t.square(t.sub(mlp_forward(t, b2, o), y)));
      Var total = t.add(mse1, mse2);
      t.backward(total);
      ParamSet g1 = mlp_grads(t, b1);
      ParamSet g2 = mlp_grads(t, b2);
      adamw_step(pair.first.ps, g1, pair.opt_first, lr);
      adamw_step(pair.second.ps, g2, pair.opt_second, lr);
      loss_sum += 0.5 * t.value(total)(0, 0);
      steps += 1;
    }
  }
  return loss_sum / static_cast<double>(steps);
}

}  // namespace rfo

#pragma once

#include "rfo/tape.hpp"

#include <random>
#include <string>
#include <vector>

namespace rfo {

/// Flat ordered collection of named parameter tensors. Ordering is the
/// binding / optimizer / checkpoint order and must stay stable.
struct ParamSet {
  struct Tensor {
    std::string name;
    Mat value;
  };
  std::vector<Tensor> tensors;

  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  long scalar_count() const;
};

struct MlpConfig {
  int in = 0;
  int out = 0;
  std::vector<int> hidden;  // widths of hidden layers
};

struct MlpParams {
  MlpConfig cfg;
  ParamSet ps;
};

/// Orthogonal weights (gain 1), zero biases, LayerNorm scale 1 / shift 0.
MlpParams mlp_init(const MlpConfig& cfg, std::mt19937_64& rng);

/// Tape handles for one forward/backward pass over a parameter snapshot.
struct BoundMlp {
  const MlpParams* params = nullptr;
  std::vector<Var> vars;  // one per ParamSet tensor, same order
  bool differentiable = true;
};

/// Injects parameters as leaves (differentiable) or constants.
BoundMlp mlp_bind(Tape& t, const MlpParams& p, bool differentiable = true);

/// Hidden layers: linear -> LayerNorm -> SiLU. Output layer: plain linear.
/// x is in-width x batch.
Var mlp_forward(Tape& t, const BoundMlp& b, Var x);

/// Gradients of the bound parameters after backward(), in ParamSet order.
ParamSet mlp_grads(const Tape& t, const BoundMlp& b);

Mat orthogonal_matrix(long rows, long cols, std::mt19937_64& rng);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamWState {
  AdamWConfig cfg;
  std::vector<Mat> m;  // first moments, one per tensor
  std::vector<Mat> v;  // second moments
  long step = 0;
};

AdamWState adamw_init(const ParamSet& params, const AdamWConfig& cfg = {});

/// Decoupled weight decay Adam with bias correction. Throws on non-finite
/// gradients, naming the offending tensor.
void adamw_step(ParamSet& params, const ParamSet& grads, AdamWState& state,
                double lr);

struct LrSchedule {
  enum class Mode { Linear, Constant };
  double eta0 = 0;
  long total = 1;
  Mode mode = Mode::Linear;

  double rate(long t) const;
};

double global_grad_norm(const ParamSet& grads);
/// Scales grads in place so the global norm is at most max_norm.
void clip_grad_norm(ParamSet& grads, double max_norm);

}  // namespace rfo

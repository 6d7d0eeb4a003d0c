#pragma once

#include "rfo/net.hpp"
#include "rfo/tape.hpp"

namespace rfo {

struct FlowConfig {
  int steps = 4;           // Euler steps K; step size is 1/K
  double clamp_bound = 3.0;  // pre-tanh clamp B for buffered targets
  int chunk = 1;           // actions generated per flow sample

  void validate() const;
};

/// Vector field input layout: concat(x in R^{d*C}, flow time u, observation).
int vf_input_width(int act_dim, int chunk, int obs_dim);

/// One Euler-integrated flow sample, fully on the tape.
struct ActionSample {
  Mat noise;               // source draw, d*C x N; equals the k=0 state
  std::vector<Var> chain;  // a_{t,0} .. a_{t,K}
  Var pre_tanh;            // a_{t,K}
  Var action;              // tanh(pre_tanh), componentwise in (-1,1)
};

/// a_{k+1} = a_k + (1/K) * vf(a_k, k/K | obs), a_0 = noise. Gradients flow
/// from the squashed action back to the vector field parameters and obs.
ActionSample sample_action(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                           Var obs, const Mat& noise);

/// Chunked variant: one flow generates C consecutive actions stacked in
/// rows. noise is (act_dim * C) x N.
ActionSample sample_chunk(Tape& t, const BoundMlp& vf, const FlowConfig& cfg,
                          Var obs, const Mat& noise);

/// Componentwise clamp to [-B, B]; for sanitizing buffered CFM targets,
/// never on the action path.
Mat clamp_pretanh(const Mat& pre_tanh, double bound);

}  // namespace rfo

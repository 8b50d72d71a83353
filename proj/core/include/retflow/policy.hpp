#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "retflow/encoder.hpp"
#include "retflow/nn.hpp"
#include "retflow/rng.hpp"
#include "retflow/tensor.hpp"

namespace retflow {

// Diagonal Gaussian over action vectors.
struct GaussianParams {
  std::vector<double> mu;
  std::vector<double> sigma;  // each >= sigma_min
};

struct ActionVector {
  std::vector<double> a;
};

// What the agent observes: dense user features plus a snapshot of the
// user's interaction log. The log is append-only and shared between
// observations of the same user; hist_end freezes how much of it this
// observation may see.
struct Observation {
  UserFeatures features;
  std::shared_ptr<const std::vector<HistEntry>> log;
  std::size_t hist_end = 0;
  bool ncd = false;  // ablation: hide the context-statistics pathway

  HistoryView view() const {
    if (!log || hist_end == 0) return HistoryView{};
    return HistoryView{log->data(), hist_end};
  }
};

// One step of a session. Terminal transitions carry the retention signal
// for the state in which the user left; their r_t is not part of the loss.
struct Transition {
  Observation obs;
  Observation next_obs;
  StateEmbedding s_t;
  StateEmbedding s_next;
  ActionVector a_t;
  double r_t = 0.0;
  double reward_prefix = 0.0;  // sum of r_j for j < t within the session
  bool is_terminal = false;
  double retention = 0.0;  // in (0,1], set iff is_terminal
};

struct SessionTrajectory {
  std::vector<Transition> steps;  // last entry is the terminal transition
};

struct Hyper {
  double alpha = 1.0;
  double beta_F = 1.0;
  double beta_B = 1.0;
  double beta_r = 0.5;
  double lr_flow = 2e-5;
  double lr_forward = 1e-4;
  double lr_backward = 1e-4;
  std::size_t batch_size = 128;
  double sigma_min = 0.05;
  std::size_t d_action = 8;
  std::size_t slate_size = 6;
  // Ablation: drop per-step reward terms and fold the accumulated session
  // reward into the terminal target instead.
  bool sif = false;
};

struct GfnDims {
  EncoderDims enc;
  std::size_t d_action = 8;
  std::size_t hidden = 128;

  std::size_t state_dim() const { return enc.state_dim(); }
  MLPSpec fw_spec() const {
    return MLPSpec{{state_dim(), hidden, 2 * d_action}, Act::tanh,
                   Act::identity};
  }
  MLPSpec bw_spec() const {
    return MLPSpec{{2 * state_dim() + d_action, hidden, 1}, Act::tanh,
                   Act::sigmoid};
  }
  MLPSpec flow_spec() const {
    return MLPSpec{{state_dim(), hidden, 1}, Act::tanh, Act::sigmoid};
  }
};

// Registers the encoder plus the three heads: "fw" (Gaussian statistics),
// "bw" (backward confidence), "flow" (retention flow, sigmoid output).
void register_gfn(ParamSet& params, const GfnDims& dims);

// Glorot init, then pulls the spread head of "fw" down so the initial
// Gaussian is narrow and its density term carries signal from step one.
void init_gfn(ParamSet& params, const GfnDims& dims, RngStream& rng);

GaussianParams forward_policy(const GfnDims& dims, const ParamSet& params,
                              const StateEmbedding& s, double sigma_min);

ActionVector sample_action(const GaussianParams& g, RngStream& rng);
// Reparameterized form: a = mu + sigma * z for caller-supplied noise.
ActionVector action_from_noise(const GaussianParams& g,
                               const std::vector<double>& z);

// Deterministic top-K by inner product; catalog row i holds the embedding
// of item id i+1. Ties go to the smaller id. Returned ids are 1-based.
std::vector<std::size_t> action_to_slate(const ActionVector& a,
                                         const Tensor2D& catalog,
                                         std::size_t K);

double forward_log_density(const GaussianParams& g, const ActionVector& a);

// F_R(s) in (0,1).
double flow_value(const GfnDims& dims, const ParamSet& params,
                  const StateEmbedding& s);
// P_B(s_t | s_next) in (0,1).
double backward_prob(const GfnDims& dims, const ParamSet& params,
                     const StateEmbedding& s, const ActionVector& a,
                     const StateEmbedding& s_next);

// R * exp(alpha * sum(immediate)); switches to log space for huge exponents.
double reward_integrate(double retention, const std::vector<double>& immediate,
                        double alpha);
double reward_integrate_sum(double retention, double reward_sum, double alpha);

// F_I(s_t) = exp(sum of rewards before step t); 1 for an empty prefix.
double immediate_flow(const std::vector<double>& immediate_prefix);

// Signed residual of the balance condition, evaluated on the stored state
// embeddings. db_loss is its square.
double db_residual(const GfnDims& dims, const ParamSet& params,
                   const Transition& t, const Hyper& h);
double db_loss(const GfnDims& dims, const ParamSet& params,
               const Transition& t, const Hyper& h);

// Differentiable batch loss: re-encodes each transition's observations so
// gradients reach the encoder. Accumulates d(mean loss)/d(theta) into grads
// when accumulate_grads is set. proj, if given, must match params.
double db_loss_batch(const GfnDims& dims, ParamSet& params,
                     const std::vector<const Transition*>& batch,
                     const Hyper& h, bool accumulate_grads,
                     const EncoderProj* proj = nullptr);

// One Adam state per learning-rate group.
struct GfnOpt {
  AdamState flow;
  AdamState forward;  // policy head + encoder
  AdamState backward;
};
GfnOpt make_gfn_opt(const ParamSet& params);

// Mean batch loss, backprop, and one Adam step per group.
double train_step(const GfnDims& dims, ParamSet& params, GfnOpt& opt,
                  const std::vector<const Transition*>& batch, const Hyper& h);

}  // namespace retflow

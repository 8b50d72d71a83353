#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "retflow/tensor.hpp"

namespace retflow {

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// log(exp(a) + exp(b)) without overflow.
inline double log_add_exp(double a, double b) {
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Sigmoid outputs clamp their pre-activation here so log(output) and
// log(1 - output) stay finite.
inline constexpr double kSigmoidPreClamp = 30.0;

enum class Act { relu, tanh, identity, sigmoid, softplus };

// ----- MLP -----

struct MLPSpec {
  std::vector<std::size_t> widths;  // [in, hidden..., out]
  Act hidden = Act::tanh;
  Act output = Act::identity;
};

// Adds <prefix>.W<l> (out x in) and <prefix>.b<l> (1 x out) per layer.
void register_mlp(ParamSet& params, const std::string& prefix,
                  const MLPSpec& spec);

struct MlpCache {
  std::vector<std::vector<double>> pre;  // pre-activation per layer
  std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = layer l output
  std::size_t layers = 0;
};

// Returns the output activation (reference into the cache).
const std::vector<double>& mlp_forward(const MLPSpec& spec,
                                       const ParamSet& params,
                                       const std::string& prefix,
                                       const std::vector<double>& input,
                                       MlpCache& cache);

// Accumulates parameter grads, returns grad w.r.t. the input. upstream is
// dL/d(output) after the output activation. Two calls accumulate additively.
std::vector<double> mlp_backward(const MLPSpec& spec, ParamSet& params,
                                 const std::string& prefix,
                                 const MlpCache& cache,
                                 const std::vector<double>& upstream);

// ----- single-block multi-head self-attention -----

struct AttentionSpec {
  std::size_t d_model = 0;
  std::size_t num_heads = 1;
};

// Adds <prefix>.Wq/Wk/Wv/Wo (d x d) and <prefix>.bq/bk/bv/bo (1 x d).
void register_attention(ParamSet& params, const std::string& prefix,
                        const AttentionSpec& spec);

// Shared core: query projection for the last position, scaled dot-product
// softmax per head over caller-supplied keys/values, head mixing, output
// projection, residual add. Callers own the key/value projection so the
// encoder can fuse it with its entry projection.
struct AttnCoreCache {
  std::vector<double> x_last;
  Tensor2D K, V;          // len x d_model
  std::vector<double> q;  // d_model
  Tensor2D alpha;         // num_heads x len
  std::vector<double> ctx;  // concatenated head outputs, pre output-projection
  std::size_t len = 0;
};

void attn_core_forward(const AttentionSpec& spec, const ParamSet& params,
                       const std::string& prefix, const double* x_last,
                       const Tensor2D& K, const Tensor2D& V, std::size_t len,
                       AttnCoreCache& cache, std::vector<double>& out);

// dK/dV are overwritten (len x d_model); dx_last is accumulated into.
void attn_core_backward(const AttentionSpec& spec, ParamSet& params,
                        const std::string& prefix, const AttnCoreCache& cache,
                        const double* dout, Tensor2D& dK, Tensor2D& dV,
                        std::vector<double>& dx_last);

struct AttnCache {
  AttnCoreCache core;
  Tensor2D X;  // input sequence, kept for the projection backward
};

// Output of the last position for the whole block. sequence is len x d_model.
std::vector<double> attention_encode(const AttentionSpec& spec,
                                     const ParamSet& params,
                                     const std::string& prefix,
                                     const Tensor2D& sequence,
                                     AttnCache* cache = nullptr);

// Returns grads w.r.t. the input sequence.
Tensor2D attention_backward(const AttentionSpec& spec, ParamSet& params,
                            const std::string& prefix, const AttnCache& cache,
                            const std::vector<double>& dout);

// ----- Adam -----

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  // name -> (first moment, second moment); names define the subset updated.
  std::map<std::string, std::pair<Tensor2D, Tensor2D>> moments;
};

AdamState make_adam_state(const ParamSet& params,
                          const std::function<bool(const std::string&)>& take);

// Bias-corrected update on the tensors tracked by state; consumed grads are
// zeroed. Non-finite gradients abort with the parameter name and step count.
void adam_step(ParamSet& params, AdamState& state, double lr);

// ----- finite-difference gradient check -----

struct GradCheckResult {
  bool pass = true;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::map<std::string, double> per_tensor_max;
};

// f must be deterministic, return the scalar loss, and accumulate analytic
// grads into the ParamSet it is given. Central differences on a sampled
// subset of elements (at least samples_per_tensor per tensor, all if fewer).
// Relative error uses max(|fd|, |analytic|, 1) as the denominator.
GradCheckResult gradient_check(const std::function<double(ParamSet&)>& f,
                               ParamSet& params, double eps, double tol,
                               RngStream& rng,
                               std::size_t samples_per_tensor = 64);

}  // namespace retflow

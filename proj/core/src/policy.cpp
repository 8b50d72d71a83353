#include "retflow/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace retflow {
namespace {

const double kLn2Pi = std::log(2.0 * 3.14159265358979323846);

GaussianParams gaussian_from_raw(const std::vector<double>& raw,
                                 std::size_t d_action, double sigma_min) {
  GaussianParams g;
  g.mu.assign(raw.begin(), raw.begin() + d_action);
  g.sigma.resize(d_action);
  for (std::size_t i = 0; i < d_action; ++i)
    g.sigma[i] = softplus(raw[d_action + i]) + sigma_min;
  return g;
}

std::vector<double> bw_input(const StateEmbedding& s, const ActionVector& a,
                             const StateEmbedding& s_next) {
  std::vector<double> in;
  in.reserve(s.s.size() + a.a.size() + s_next.s.size());
  in.insert(in.end(), s.s.begin(), s.s.end());
  in.insert(in.end(), a.a.begin(), a.a.end());
  in.insert(in.end(), s_next.s.begin(), s_next.s.end());
  return in;
}

void check_terminal(const Transition& t) {
  if (t.retention <= 0.0 || t.retention > 1.0)
    throw std::invalid_argument(
        "terminal transition needs retention in (0,1]");
}

// ln(target + beta_r) where target is R, or R*exp(alpha*sum) when the
// session reward is folded into the terminal state.
double terminal_target_log(const Transition& t, const Hyper& h) {
  double lr = std::log(t.retention);
  if (h.sif) lr += h.alpha * t.reward_prefix;
  return log_add_exp(lr, std::log(h.beta_r));
}

}  // namespace

void register_gfn(ParamSet& params, const GfnDims& dims) {
  register_encoder(params, dims.enc);
  register_mlp(params, "fw", dims.fw_spec());
  register_mlp(params, "bw", dims.bw_spec());
  register_mlp(params, "flow", dims.flow_spec());
}

void init_gfn(ParamSet& params, const GfnDims& dims, RngStream& rng) {
  glorot_init(params, rng);
  // State-independent spread at init: zero the spread rows and set a deep
  // bias so the policy starts near-deterministic and the density term
  // dominates the early objective.
  std::size_t last = dims.fw_spec().widths.size() - 2;
  Tensor2D& W = params.value("fw.W" + std::to_string(last));
  Tensor2D& b = params.value("fw.b" + std::to_string(last));
  for (std::size_t i = 0; i < dims.d_action; ++i) {
    double* row = W.row(dims.d_action + i);
    for (std::size_t c = 0; c < W.cols; ++c) row[c] = 0.0;
    b.data[dims.d_action + i] = -4.0;
  }
}

GaussianParams forward_policy(const GfnDims& dims, const ParamSet& params,
                              const StateEmbedding& s, double sigma_min) {
  MlpCache cache;
  const std::vector<double>& raw =
      mlp_forward(dims.fw_spec(), params, "fw", s.s, cache);
  return gaussian_from_raw(raw, dims.d_action, sigma_min);
}

ActionVector sample_action(const GaussianParams& g, RngStream& rng) {
  ActionVector a;
  a.a.resize(g.mu.size());
  for (std::size_t i = 0; i < g.mu.size(); ++i)
    a.a[i] = g.mu[i] + g.sigma[i] * rng.normal();
  return a;
}

ActionVector action_from_noise(const GaussianParams& g,
                               const std::vector<double>& z) {
  if (z.size() != g.mu.size())
    throw std::invalid_argument("action_from_noise: noise length mismatch");
  ActionVector a;
  a.a.resize(g.mu.size());
  for (std::size_t i = 0; i < g.mu.size(); ++i)
    a.a[i] = g.mu[i] + g.sigma[i] * z[i];
  return a;
}

std::vector<std::size_t> action_to_slate(const ActionVector& a,
                                         const Tensor2D& catalog,
                                         std::size_t K) {
  if (catalog.rows == 0 || K > catalog.rows)
    throw std::invalid_argument("action_to_slate: slate larger than catalog");
  if (catalog.cols != a.a.size())
    throw std::invalid_argument("action_to_slate: embedding size mismatch");
  std::vector<double> score(catalog.rows, 0.0);
  for (std::size_t i = 0; i < catalog.rows; ++i) {
    const double* v = catalog.row(i);
    double acc = 0.0;
    for (std::size_t c = 0; c < catalog.cols; ++c) acc += a.a[c] * v[c];
    score[i] = acc;
  }
  std::vector<std::size_t> idx(catalog.rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + K, idx.end(),
                    [&](std::size_t x, std::size_t y) {
                      if (score[x] != score[y]) return score[x] > score[y];
                      return x < y;
                    });
  std::vector<std::size_t> slate(idx.begin(), idx.begin() + K);
  for (std::size_t& id : slate) ++id;  // item ids are 1-based
  return slate;
}

double forward_log_density(const GaussianParams& g, const ActionVector& a) {
  if (a.a.size() != g.mu.size() || g.sigma.size() != g.mu.size())
    throw std::invalid_argument("forward_log_density: size mismatch");
  double ld = 0.0;
  for (std::size_t i = 0; i < g.mu.size(); ++i) {
    double z = (a.a[i] - g.mu[i]) / g.sigma[i];
    ld += -0.5 * z * z - std::log(g.sigma[i]) - 0.5 * kLn2Pi;
  }
  return ld;
}

double flow_value(const GfnDims& dims, const ParamSet& params,
                  const StateEmbedding& s) {
  MlpCache cache;
  return mlp_forward(dims.flow_spec(), params, "flow", s.s, cache)[0];
}

double backward_prob(const GfnDims& dims, const ParamSet& params,
                     const StateEmbedding& s, const ActionVector& a,
                     const StateEmbedding& s_next) {
  MlpCache cache;
  return mlp_forward(dims.bw_spec(), params, "bw", bw_input(s, a, s_next),
                     cache)[0];
}

double reward_integrate_sum(double retention, double reward_sum,
                            double alpha) {
  if (retention <= 0.0)
    throw std::invalid_argument("reward_integrate: retention must be > 0");
  double e = alpha * reward_sum;
  if (e == 0.0) return retention;
  if (e <= 500.0) return retention * std::exp(e);
  return std::exp(std::log(retention) + e);
}

double reward_integrate(double retention, const std::vector<double>& immediate,
                        double alpha) {
  double sum = 0.0;
  for (double r : immediate) {
    if (r < 0.0)
      throw std::invalid_argument("reward_integrate: negative reward");
    sum += r;
  }
  return reward_integrate_sum(retention, sum, alpha);
}

double immediate_flow(const std::vector<double>& immediate_prefix) {
  double sum = 0.0;
  for (double r : immediate_prefix) sum += r;
  return std::exp(sum);
}

double db_residual(const GfnDims& dims, const ParamSet& params,
                   const Transition& t, const Hyper& h) {
  if (t.is_terminal) {
    check_terminal(t);
    return std::log(flow_value(dims, params, t.s_t)) -
           terminal_target_log(t, h);
  }
  GaussianParams g = forward_policy(dims, params, t.s_t, h.sigma_min);
  double ld = forward_log_density(g, t.a_t);
  double lf = log_add_exp(ld, std::log(h.beta_F));
  double pb = backward_prob(dims, params, t.s_t, t.a_t, t.s_next);
  double u = std::log(flow_value(dims, params, t.s_t)) + lf -
             std::log(flow_value(dims, params, t.s_next)) -
             std::log(pb + h.beta_B);
  if (!h.sif) u -= h.alpha * t.r_t;
  return u;
}

double db_loss(const GfnDims& dims, const ParamSet& params,
               const Transition& t, const Hyper& h) {
  double u = db_residual(dims, params, t, h);
  if (!std::isfinite(u))
    throw std::runtime_error("db_loss: non-finite residual");
  return u * u;
}

double db_loss_batch(const GfnDims& dims, ParamSet& params,
                     const std::vector<const Transition*>& batch,
                     const Hyper& h, bool accumulate_grads,
                     const EncoderProj* proj) {
  if (batch.empty())
    throw std::invalid_argument("db_loss_batch: empty batch");
  const double inv_b = 1.0 / double(batch.size());
  const double ln_bf = std::log(h.beta_F);
  const MLPSpec flow_spec = dims.flow_spec();
  const MLPSpec fw_spec = dims.fw_spec();
  const MLPSpec bw_spec = dims.bw_spec();
  const std::size_t da = dims.d_action;
  const std::size_t sd = dims.state_dim();

  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];

    EncoderCache enc_t;
    StateEmbedding se_t = encode_state(dims.enc, params, t.obs.features,
                                       t.obs.view(), t.obs.ncd, enc_t, proj);
    MlpCache cf_t;
    double f_t = mlp_forward(flow_spec, params, "flow", se_t.s, cf_t)[0];

    if (t.is_terminal) {
      check_terminal(t);
      double u = std::log(f_t) - terminal_target_log(t, h);
      if (!std::isfinite(u))
        throw std::runtime_error("db_loss_batch: non-finite loss at transition " +
                                 std::to_string(i));
      total += u * u * inv_b;
      if (accumulate_grads) {
        double g0 = 2.0 * u * inv_b;
        std::vector<double> ds =
            mlp_backward(flow_spec, params, "flow", cf_t, {g0 / f_t});
        encoder_backward(dims.enc, params, enc_t, ds, proj);
      }
      continue;
    }

    EncoderCache enc_n;
    StateEmbedding se_n =
        encode_state(dims.enc, params, t.next_obs.features, t.next_obs.view(),
                     t.next_obs.ncd, enc_n, proj);
    MlpCache cf_n;
    double f_n = mlp_forward(flow_spec, params, "flow", se_n.s, cf_n)[0];

    MlpCache cfw;
    const std::vector<double>& raw =
        mlp_forward(fw_spec, params, "fw", se_t.s, cfw);
    GaussianParams g = gaussian_from_raw(raw, da, h.sigma_min);
    double ld = forward_log_density(g, t.a_t);
    double lf = log_add_exp(ld, ln_bf);

    MlpCache cbw;
    double pb =
        mlp_forward(bw_spec, params, "bw", bw_input(se_t, t.a_t, se_n), cbw)[0];

    double u = std::log(f_t) + lf - std::log(f_n) - std::log(pb + h.beta_B);
    if (!h.sif) u -= h.alpha * t.r_t;
    if (!std::isfinite(u))
      throw std::runtime_error("db_loss_batch: non-finite loss at transition " +
                               std::to_string(i));
    total += u * u * inv_b;
    if (!accumulate_grads) continue;

    double g0 = 2.0 * u * inv_b;

    std::vector<double> ds_t =
        mlp_backward(flow_spec, params, "flow", cf_t, {g0 / f_t});
    std::vector<double> ds_n =
        mlp_backward(flow_spec, params, "flow", cf_n, {-g0 / f_n});

    // d lf / d log-density, then through mu and the softplus sigma head.
    double w = sigmoid(ld - ln_bf);
    std::vector<double> up_fw(2 * da, 0.0);
    for (std::size_t k = 0; k < da; ++k) {
      double z = (t.a_t.a[k] - g.mu[k]) / g.sigma[k];
      up_fw[k] = g0 * w * z / g.sigma[k];
      up_fw[da + k] =
          g0 * w * ((z * z - 1.0) / g.sigma[k]) * sigmoid(raw[da + k]);
    }
    std::vector<double> dfw_in = mlp_backward(fw_spec, params, "fw", cfw, up_fw);
    for (std::size_t k = 0; k < sd; ++k) ds_t[k] += dfw_in[k];

    std::vector<double> dbw_in =
        mlp_backward(bw_spec, params, "bw", cbw, {-g0 / (pb + h.beta_B)});
    for (std::size_t k = 0; k < sd; ++k) {
      ds_t[k] += dbw_in[k];
      ds_n[k] += dbw_in[sd + da + k];
    }

    encoder_backward(dims.enc, params, enc_t, ds_t, proj);
    encoder_backward(dims.enc, params, enc_n, ds_n, proj);
  }
  return total;
}

GfnOpt make_gfn_opt(const ParamSet& params) {
  GfnOpt opt;
  opt.flow = make_adam_state(params, [](const std::string& n) {
    return n.rfind("flow", 0) == 0;
  });
  opt.forward = make_adam_state(params, [](const std::string& n) {
    return n.rfind("fw", 0) == 0 || n.rfind("enc", 0) == 0;
  });
  opt.backward = make_adam_state(params, [](const std::string& n) {
    return n.rfind("bw", 0) == 0;
  });
  return opt;
}

double train_step(const GfnDims& dims, ParamSet& params, GfnOpt& opt,
                  const std::vector<const Transition*>& batch, const Hyper& h) {
  if (batch.size() != h.batch_size)
    throw std::invalid_argument("train_step: batch size mismatch");
  EncoderProj proj = make_encoder_proj(params, dims.enc);
  double loss = db_loss_batch(dims, params, batch, h, true, &proj);
  adam_step(params, opt.flow, h.lr_flow);
  adam_step(params, opt.forward, h.lr_forward);
  adam_step(params, opt.backward, h.lr_backward);
  return loss;
}

}  // namespace retflow

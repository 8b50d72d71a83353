#include "retflow/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retflow {
namespace {

// y = W x + b, W is out x in.
void linear_forward(const Tensor2D& W, const Tensor2D& b,
                    const std::vector<double>& x, std::vector<double>& y) {
  y.assign(W.rows, 0.0);
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double* wr = W.row(r);
    double acc = b.data[r];
    for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

// Accumulates dW += dy x^T, db += dy, dx += W^T dy.
void linear_backward(const Tensor2D& W, Tensor2D& dW, Tensor2D& db,
                     const std::vector<double>& x,
                     const std::vector<double>& dy, std::vector<double>& dx) {
  for (std::size_t r = 0; r < W.rows; ++r) {
    double g = dy[r];
    db.data[r] += g;
    double* dwr = dW.row(r);
    const double* wr = W.row(r);
    for (std::size_t c = 0; c < W.cols; ++c) {
      dwr[c] += g * x[c];
      dx[c] += g * wr[c];
    }
  }
}

void apply_activation(Act act, const std::vector<double>& pre,
                      std::vector<double>& out) {
  out.resize(pre.size());
  switch (act) {
    case Act::relu:
      for (std::size_t i = 0; i < pre.size(); ++i)
        out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
      break;
    case Act::tanh:
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = std::tanh(pre[i]);
      break;
    case Act::identity:
      out = pre;
      break;
    case Act::sigmoid:
      for (std::size_t i = 0; i < pre.size(); ++i)
        out[i] = sigmoid(std::clamp(pre[i], -kSigmoidPreClamp, kSigmoidPreClamp));
      break;
    case Act::softplus:
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = softplus(pre[i]);
      break;
  }
}

// dpre = dout * act'(pre), using pre and out as available.
void activation_grad(Act act, const std::vector<double>& pre,
                     const std::vector<double>& out,
                     const std::vector<double>& dout,
                     std::vector<double>& dpre) {
  dpre.resize(pre.size());
  switch (act) {
    case Act::relu:
      for (std::size_t i = 0; i < pre.size(); ++i)
        dpre[i] = pre[i] > 0.0 ? dout[i] : 0.0;
      break;
    case Act::tanh:
      for (std::size_t i = 0; i < pre.size(); ++i)
        dpre[i] = dout[i] * (1.0 - out[i] * out[i]);
      break;
    case Act::identity:
      dpre = dout;
      break;
    case Act::sigmoid:
      for (std::size_t i = 0; i < pre.size(); ++i) {
        if (std::abs(pre[i]) >= kSigmoidPreClamp) {
          dpre[i] = 0.0;
        } else {
          dpre[i] = dout[i] * out[i] * (1.0 - out[i]);
        }
      }
      break;
    case Act::softplus:
      for (std::size_t i = 0; i < pre.size(); ++i)
        dpre[i] = dout[i] * sigmoid(pre[i]);
      break;
  }
}

std::string wname(const std::string& prefix, std::size_t l) {
  return prefix + ".W" + std::to_string(l);
}
std::string bname(const std::string& prefix, std::size_t l) {
  return prefix + ".b" + std::to_string(l);
}

}  // namespace

void register_mlp(ParamSet& params, const std::string& prefix,
                  const MLPSpec& spec) {
  if (spec.widths.size() < 2)
    throw std::invalid_argument("register_mlp: need at least one layer");
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    params.add(wname(prefix, l), spec.widths[l + 1], spec.widths[l],
               ParamKind::weight);
    params.add(bname(prefix, l), 1, spec.widths[l + 1], ParamKind::bias);
  }
}

const std::vector<double>& mlp_forward(const MLPSpec& spec,
                                       const ParamSet& params,
                                       const std::string& prefix,
                                       const std::vector<double>& input,
                                       MlpCache& cache) {
  if (input.size() != spec.widths.front())
    throw std::invalid_argument("mlp_forward: input size mismatch for " +
                                prefix);
  std::size_t layers = spec.widths.size() - 1;
  cache.layers = layers;
  cache.pre.resize(layers);
  cache.act.resize(layers + 1);
  cache.act[0] = input;
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor2D& W = params.value(wname(prefix, l));
    const Tensor2D& b = params.value(bname(prefix, l));
    linear_forward(W, b, cache.act[l], cache.pre[l]);
    Act act = (l + 1 == layers) ? spec.output : spec.hidden;
    apply_activation(act, cache.pre[l], cache.act[l + 1]);
  }
  return cache.act[layers];
}

std::vector<double> mlp_backward(const MLPSpec& spec, ParamSet& params,
                                 const std::string& prefix,
                                 const MlpCache& cache,
                                 const std::vector<double>& upstream) {
  std::size_t layers = spec.widths.size() - 1;
  if (cache.layers != layers || cache.act.size() != layers + 1 ||
      cache.act[0].size() != spec.widths.front())
    throw std::invalid_argument("mlp_backward: stale cache for " + prefix);
  if (upstream.size() != spec.widths.back())
    throw std::invalid_argument("mlp_backward: upstream size mismatch for " +
                                prefix);
  std::vector<double> dout = upstream;
  std::vector<double> dpre, dx;
  for (std::size_t l = layers; l-- > 0;) {
    Act act = (l + 1 == layers) ? spec.output : spec.hidden;
    activation_grad(act, cache.pre[l], cache.act[l + 1], dout, dpre);
    const Tensor2D& W = params.value(wname(prefix, l));
    Tensor2D& dW = params.grad(wname(prefix, l));
    Tensor2D& db = params.grad(bname(prefix, l));
    dx.assign(W.cols, 0.0);
    linear_backward(W, dW, db, cache.act[l], dpre, dx);
    dout = dx;
  }
  return dout;
}

void register_attention(ParamSet& params, const std::string& prefix,
                        const AttentionSpec& spec) {
  if (spec.d_model == 0 || spec.num_heads == 0 ||
      spec.d_model % spec.num_heads != 0)
    throw std::invalid_argument(
        "register_attention: d_model must be divisible by num_heads");
  for (const char* n : {"Wq", "Wk", "Wv", "Wo"})
    params.add(prefix + "." + n, spec.d_model, spec.d_model, ParamKind::weight);
  for (const char* n : {"bq", "bk", "bv", "bo"})
    params.add(prefix + "." + n, 1, spec.d_model, ParamKind::bias);
}

void attn_core_forward(const AttentionSpec& spec, const ParamSet& params,
                       const std::string& prefix, const double* x_last,
                       const Tensor2D& K, const Tensor2D& V, std::size_t len,
                       AttnCoreCache& cache, std::vector<double>& out) {
  std::size_t d = spec.d_model;
  std::size_t heads = spec.num_heads;
  std::size_t dh = d / heads;
  if (len == 0 || K.rows != len || V.rows != len || K.cols != d || V.cols != d)
    throw std::invalid_argument("attn_core_forward: bad key/value shapes");
  double inv_scale = 1.0 / std::sqrt(double(dh));

  cache.len = len;
  cache.x_last.assign(x_last, x_last + d);
  cache.K = K;
  cache.V = V;

  const Tensor2D& Wq = params.value(prefix + ".Wq");
  const Tensor2D& bq = params.value(prefix + ".bq");
  cache.q.assign(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double* wr = Wq.row(r);
    double acc = bq.data[r];
    for (std::size_t c = 0; c < d; ++c) acc += wr[c] * x_last[c];
    cache.q[r] = acc;
  }

  cache.alpha = Tensor2D(heads, len);
  cache.ctx.assign(d, 0.0);
  std::vector<double> scores(len);
  for (std::size_t h = 0; h < heads; ++h) {
    std::size_t off = h * dh;
    double mx = -1e300;
    for (std::size_t j = 0; j < len; ++j) {
      const double* kj = K.row(j) + off;
      double acc = 0.0;
      for (std::size_t c = 0; c < dh; ++c) acc += cache.q[off + c] * kj[c];
      scores[j] = acc * inv_scale;
      mx = std::max(mx, scores[j]);
    }
    double z = 0.0;
    double* al = cache.alpha.row(h);
    for (std::size_t j = 0; j < len; ++j) {
      al[j] = std::exp(scores[j] - mx);
      z += al[j];
    }
    for (std::size_t j = 0; j < len; ++j) al[j] /= z;
    for (std::size_t j = 0; j < len; ++j) {
      const double* vj = V.row(j) + off;
      double a = al[j];
      for (std::size_t c = 0; c < dh; ++c) cache.ctx[off + c] += a * vj[c];
    }
  }

  const Tensor2D& Wo = params.value(prefix + ".Wo");
  const Tensor2D& bo = params.value(prefix + ".bo");
  out.assign(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double* wr = Wo.row(r);
    double acc = bo.data[r] + x_last[r];
    for (std::size_t c = 0; c < d; ++c) acc += wr[c] * cache.ctx[c];
    out[r] = acc;
  }
}

void attn_core_backward(const AttentionSpec& spec, ParamSet& params,
                        const std::string& prefix, const AttnCoreCache& cache,
                        const double* dout, Tensor2D& dK, Tensor2D& dV,
                        std::vector<double>& dx_last) {
  std::size_t d = spec.d_model;
  std::size_t heads = spec.num_heads;
  std::size_t dh = d / heads;
  std::size_t len = cache.len;
  if (len == 0 || cache.K.rows != len || cache.alpha.rows != heads)
    throw std::invalid_argument("attn_core_backward: stale cache");
  double inv_scale = 1.0 / std::sqrt(double(dh));

  dK = Tensor2D(len, d);
  dV = Tensor2D(len, d);
  if (dx_last.size() != d)
    throw std::invalid_argument("attn_core_backward: dx_last size mismatch");

  const Tensor2D& Wo = params.value(prefix + ".Wo");
  Tensor2D& dWo = params.grad(prefix + ".Wo");
  Tensor2D& dbo = params.grad(prefix + ".bo");
  std::vector<double> dctx(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    double g = dout[r];
    dx_last[r] += g;  // residual
    dbo.data[r] += g;
    double* dwr = dWo.row(r);
    const double* wr = Wo.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      dwr[c] += g * cache.ctx[c];
      dctx[c] += g * wr[c];
    }
  }

  std::vector<double> dq(d, 0.0);
  std::vector<double> dalpha(len), dscore(len);
  for (std::size_t h = 0; h < heads; ++h) {
    std::size_t off = h * dh;
    const double* al = cache.alpha.row(h);
    for (std::size_t j = 0; j < len; ++j) {
      const double* vj = cache.V.row(j) + off;
      double acc = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        acc += dctx[off + c] * vj[c];
        dV.row(j)[off + c] += al[j] * dctx[off + c];
      }
      dalpha[j] = acc;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += al[j] * dalpha[j];
    for (std::size_t j = 0; j < len; ++j) dscore[j] = al[j] * (dalpha[j] - s);
    for (std::size_t j = 0; j < len; ++j) {
      const double* kj = cache.K.row(j) + off;
      double g = dscore[j] * inv_scale;
      double* dkj = dK.row(j) + off;
      for (std::size_t c = 0; c < dh; ++c) {
        dq[off + c] += g * kj[c];
        dkj[c] += g * cache.q[off + c];
      }
    }
  }

  const Tensor2D& Wq = params.value(prefix + ".Wq");
  Tensor2D& dWq = params.grad(prefix + ".Wq");
  Tensor2D& dbq = params.grad(prefix + ".bq");
  for (std::size_t r = 0; r < d; ++r) {
    double g = dq[r];
    dbq.data[r] += g;
    double* dwr = dWq.row(r);
    const double* wr = Wq.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      dwr[c] += g * cache.x_last[c];
      dx_last[c] += g * wr[c];
    }
  }
}

std::vector<double> attention_encode(const AttentionSpec& spec,
                                     const ParamSet& params,
                                     const std::string& prefix,
                                     const Tensor2D& sequence,
                                     AttnCache* cache) {
  if (sequence.rows == 0 || sequence.cols != spec.d_model)
    throw std::invalid_argument("attention_encode: bad sequence shape");
  std::size_t len = sequence.rows, d = spec.d_model;
  AttnCache local;
  AttnCache& c = cache ? *cache : local;
  c.X = sequence;

  const Tensor2D& Wk = params.value(prefix + ".Wk");
  const Tensor2D& bk = params.value(prefix + ".bk");
  const Tensor2D& Wv = params.value(prefix + ".Wv");
  const Tensor2D& bv = params.value(prefix + ".bv");
  Tensor2D K(len, d), V(len, d);
  for (std::size_t j = 0; j < len; ++j) {
    const double* xj = sequence.row(j);
    for (std::size_t r = 0; r < d; ++r) {
      const double* wk = Wk.row(r);
      const double* wv = Wv.row(r);
      double ak = bk.data[r], av = bv.data[r];
      for (std::size_t cidx = 0; cidx < d; ++cidx) {
        ak += wk[cidx] * xj[cidx];
        av += wv[cidx] * xj[cidx];
      }
      K.row(j)[r] = ak;
      V.row(j)[r] = av;
    }
  }

  std::vector<double> out;
  attn_core_forward(spec, params, prefix, sequence.row(len - 1), K, V, len,
                    c.core, out);
  return out;
}

Tensor2D attention_backward(const AttentionSpec& spec, ParamSet& params,
                            const std::string& prefix, const AttnCache& cache,
                            const std::vector<double>& dout) {
  std::size_t d = spec.d_model;
  std::size_t len = cache.core.len;
  if (dout.size() != d)
    throw std::invalid_argument("attention_backward: upstream size mismatch");
  if (cache.X.rows != len)
    throw std::invalid_argument("attention_backward: stale cache");

  Tensor2D dX(len, d);
  Tensor2D dK, dV;
  std::vector<double> dx_last(d, 0.0);
  attn_core_backward(spec, params, prefix, cache.core, dout.data(), dK, dV,
                     dx_last);
  for (std::size_t c = 0; c < d; ++c) dX.row(len - 1)[c] += dx_last[c];

  const Tensor2D& Wk = params.value(prefix + ".Wk");
  const Tensor2D& Wv = params.value(prefix + ".Wv");
  Tensor2D& dWk = params.grad(prefix + ".Wk");
  Tensor2D& dbk = params.grad(prefix + ".bk");
  Tensor2D& dWv = params.grad(prefix + ".Wv");
  Tensor2D& dbv = params.grad(prefix + ".bv");
  for (std::size_t j = 0; j < len; ++j) {
    const double* xj = cache.X.row(j);
    double* dxj = dX.row(j);
    const double* dkj = dK.row(j);
    const double* dvj = dV.row(j);
    for (std::size_t r = 0; r < d; ++r) {
      double gk = dkj[r], gv = dvj[r];
      dbk.data[r] += gk;
      dbv.data[r] += gv;
      double* dwk = dWk.row(r);
      double* dwv = dWv.row(r);
      const double* wk = Wk.row(r);
      const double* wv = Wv.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        dwk[c] += gk * xj[c];
        dwv[c] += gv * xj[c];
        dxj[c] += gk * wk[c] + gv * wv[c];
      }
    }
  }
  return dX;
}

AdamState make_adam_state(
    const ParamSet& params,
    const std::function<bool(const std::string&)>& take) {
  AdamState st;
  for (const auto& [name, e] : params) {
    if (!take(name)) continue;
    st.moments.emplace(name,
                       std::make_pair(Tensor2D(e.value.rows, e.value.cols),
                                      Tensor2D(e.value.rows, e.value.cols)));
  }
  return st;
}

void adam_step(ParamSet& params, AdamState& state, double lr) {
  state.step_count += 1;
  double t = double(state.step_count);
  double bc1 = 1.0 - std::pow(state.beta1, t);
  double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, mv] : state.moments) {
    Tensor2D& theta = params.value(name);
    Tensor2D& g = params.grad(name);
    Tensor2D& m = mv.first;
    Tensor2D& v = mv.second;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      double gi = g.data[i];
      if (!std::isfinite(gi))
        throw std::runtime_error("adam_step: non-finite gradient in " + name +
                                 " at step " + std::to_string(state.step_count));
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      theta.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    g.zero();
  }
}

GradCheckResult gradient_check(const std::function<double(ParamSet&)>& f,
                               ParamSet& params, double eps, double tol,
                               RngStream& rng,
                               std::size_t samples_per_tensor) {
  params.zero_grads();
  (void)f(params);
  std::map<std::string, Tensor2D> analytic;
  for (const auto& [name, e] : params) analytic.emplace(name, e.grad);

  GradCheckResult res;
  std::vector<std::size_t> idx;
  for (auto& [name, e] : params) {
    std::size_t n = e.value.size();
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::size_t take = std::min(n, samples_per_tensor);
    // Partial Fisher-Yates: the first `take` entries become a uniform sample.
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + rng.uniform_index(n - i);
      std::swap(idx[i], idx[j]);
    }
    double worst = 0.0;
    for (std::size_t s = 0; s < take; ++s) {
      std::size_t i = idx[s];
      double saved = e.value.data[i];
      e.value.data[i] = saved + eps;
      double lp = f(params);
      e.value.data[i] = saved - eps;
      double lm = f(params);
      e.value.data[i] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      double an = analytic.at(name).data[i];
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
      if (rel > worst) worst = rel;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = name;
      }
    }
    res.per_tensor_max[name] = worst;
  }
  res.pass = res.max_rel_error <= tol;
  params.zero_grads();
  return res;
}

}  // namespace retflow

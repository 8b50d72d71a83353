#include "retflow/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retflow {
namespace {

// out(r x e) = A(r x d) * B(d x e)
void matmul(const Tensor2D& A, const Tensor2D& B, Tensor2D& out) {
  out = Tensor2D(A.rows, B.cols);
  for (std::size_t r = 0; r < A.rows; ++r) {
    const double* ar = A.row(r);
    double* or_ = out.row(r);
    for (std::size_t k = 0; k < A.cols; ++k) {
      double a = ar[k];
      const double* br = B.row(k);
      for (std::size_t c = 0; c < B.cols; ++c) or_[c] += a * br[c];
    }
  }
}

void check_entry(const EncoderDims& dims, const HistEntry& e) {
  if (e.item_embedding.size() != dims.item_dim ||
      e.feedback.size() != dims.num_behaviors)
    throw std::invalid_argument("encoder: history entry dimension mismatch");
}

}  // namespace

void register_encoder(ParamSet& params, const EncoderDims& dims) {
  params.add("enc.proj.W", dims.d_model, dims.entry_dim(), ParamKind::weight);
  params.add("enc.proj.b", 1, dims.d_model, ParamKind::bias);
  params.add("enc.pad", 1, dims.d_model, ParamKind::weight);
  register_attention(params, "enc.attn", dims.attn_spec());
  register_mlp(params, "enc.feat", dims.feat_spec());
  register_mlp(params, "enc.fuse", dims.fuse_spec());
  register_mlp(params, "enc.ctx", dims.ctx_spec());
}

EncoderProj make_encoder_proj(const ParamSet& params,
                              const EncoderDims& dims) {
  EncoderProj pr;
  const Tensor2D& P = params.value("enc.proj.W");
  const Tensor2D& bp = params.value("enc.proj.b");
  const Tensor2D& Wk = params.value("enc.attn.Wk");
  const Tensor2D& bk = params.value("enc.attn.bk");
  const Tensor2D& Wv = params.value("enc.attn.Wv");
  const Tensor2D& bv = params.value("enc.attn.bv");
  matmul(Wk, P, pr.KP);
  matmul(Wv, P, pr.VP);
  pr.kb.assign(dims.d_model, 0.0);
  pr.vb.assign(dims.d_model, 0.0);
  for (std::size_t r = 0; r < dims.d_model; ++r) {
    double ak = bk.data[r], av = bv.data[r];
    const double* wk = Wk.row(r);
    const double* wv = Wv.row(r);
    for (std::size_t c = 0; c < dims.d_model; ++c) {
      ak += wk[c] * bp.data[c];
      av += wv[c] * bp.data[c];
    }
    pr.kb[r] = ak;
    pr.vb[r] = av;
  }
  return pr;
}

std::vector<double> encode_history(const EncoderDims& dims,
                                   const ParamSet& params, HistoryView hist,
                                   EncoderCache& cache,
                                   const EncoderProj* proj) {
  std::size_t d = dims.d_model;
  std::vector<double> out;
  cache.ncd = false;

  if (hist.len == 0) {
    // Single pad token; keys/values are its plain projections.
    cache.used_pad = true;
    cache.E = Tensor2D();
    const Tensor2D& pad = params.value("enc.pad");
    cache.x_last.assign(pad.data.begin(), pad.data.end());
    const Tensor2D& Wk = params.value("enc.attn.Wk");
    const Tensor2D& bk = params.value("enc.attn.bk");
    const Tensor2D& Wv = params.value("enc.attn.Wv");
    const Tensor2D& bv = params.value("enc.attn.bv");
    Tensor2D K(1, d), V(1, d);
    for (std::size_t r = 0; r < d; ++r) {
      double ak = bk.data[r], av = bv.data[r];
      const double* wk = Wk.row(r);
      const double* wv = Wv.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        ak += wk[c] * pad.data[c];
        av += wv[c] * pad.data[c];
      }
      K.row(0)[r] = ak;
      V.row(0)[r] = av;
    }
    attn_core_forward(dims.attn_spec(), params, "enc.attn",
                      cache.x_last.data(), K, V, 1, cache.attn, out);
    cache.valid = true;
    return out;
  }

  cache.used_pad = false;
  std::size_t len = std::min(hist.len, dims.hist_len);
  const HistEntry* first = hist.data + (hist.len - len);
  std::size_t ed = dims.entry_dim();
  cache.E = Tensor2D(len, ed);
  for (std::size_t j = 0; j < len; ++j) {
    check_entry(dims, first[j]);
    double* row = cache.E.row(j);
    for (std::size_t c = 0; c < dims.item_dim; ++c)
      row[c] = first[j].item_embedding[c];
    for (std::size_t c = 0; c < dims.num_behaviors; ++c)
      row[dims.item_dim + c] = first[j].feedback[c];
  }

  EncoderProj local;
  if (!proj) {
    local = make_encoder_proj(params, dims);
    proj = &local;
  }

  Tensor2D K(len, d), V(len, d);
  for (std::size_t j = 0; j < len; ++j) {
    const double* e = cache.E.row(j);
    double* kj = K.row(j);
    double* vj = V.row(j);
    for (std::size_t r = 0; r < d; ++r) {
      const double* kp = proj->KP.row(r);
      const double* vp = proj->VP.row(r);
      double ak = proj->kb[r], av = proj->vb[r];
      for (std::size_t c = 0; c < ed; ++c) {
        ak += kp[c] * e[c];
        av += vp[c] * e[c];
      }
      kj[r] = ak;
      vj[r] = av;
    }
  }

  const Tensor2D& P = params.value("enc.proj.W");
  const Tensor2D& bp = params.value("enc.proj.b");
  const double* elast = cache.E.row(len - 1);
  cache.x_last.assign(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double* pr = P.row(r);
    double acc = bp.data[r];
    for (std::size_t c = 0; c < ed; ++c) acc += pr[c] * elast[c];
    cache.x_last[r] = acc;
  }

  attn_core_forward(dims.attn_spec(), params, "enc.attn", cache.x_last.data(),
                    K, V, len, cache.attn, out);
  cache.valid = true;
  return out;
}

StateEmbedding encode_state(const EncoderDims& dims, const ParamSet& params,
                            const UserFeatures& features, HistoryView hist,
                            bool ncd, EncoderCache& cache,
                            const EncoderProj* proj) {
  if (features.v.size() != dims.d_feat)
    throw std::invalid_argument("encode_state: feature dimension mismatch");

  std::vector<double> h = encode_history(dims, params, hist, cache, proj);
  cache.ncd = ncd;

  const std::vector<double>& fe =
      mlp_forward(dims.feat_spec(), params, "enc.feat", features.v, cache.feat);

  cache.fuse_in.resize(2 * dims.d_model);
  std::copy(fe.begin(), fe.end(), cache.fuse_in.begin());
  std::copy(h.begin(), h.end(), cache.fuse_in.begin() + dims.d_model);

  StateEmbedding out;
  out.e_u =
      mlp_forward(dims.fuse_spec(), params, "enc.fuse", cache.fuse_in, cache.fuse);

  if (ncd) {
    out.psi_u.assign(dims.d_model, 0.0);
  } else {
    // Mean and count of the newest feedback vectors.
    std::size_t win = std::min<std::size_t>(
        {hist.len, dims.stats_window, dims.hist_len});
    cache.ctx_in.assign(dims.d_feat + dims.num_behaviors + 1, 0.0);
    std::copy(features.v.begin(), features.v.end(), cache.ctx_in.begin());
    if (win > 0) {
      const HistEntry* first = hist.data + (hist.len - win);
      for (std::size_t j = 0; j < win; ++j) {
        check_entry(dims, first[j]);
        for (std::size_t b = 0; b < dims.num_behaviors; ++b)
          cache.ctx_in[dims.d_feat + b] += first[j].feedback[b];
      }
      for (std::size_t b = 0; b < dims.num_behaviors; ++b)
        cache.ctx_in[dims.d_feat + b] /= double(win);
    }
    cache.ctx_in.back() = double(win) / double(dims.stats_window);
    out.psi_u =
        mlp_forward(dims.ctx_spec(), params, "enc.ctx", cache.ctx_in, cache.ctx);
  }

  out.s.resize(2 * dims.d_model);
  std::copy(out.e_u.begin(), out.e_u.end(), out.s.begin());
  std::copy(out.psi_u.begin(), out.psi_u.end(), out.s.begin() + dims.d_model);
  return out;
}

void encoder_backward(const EncoderDims& dims, ParamSet& params,
                      const EncoderCache& cache, const std::vector<double>& ds,
                      const EncoderProj* proj) {
  if (!cache.valid)
    throw std::invalid_argument("encoder_backward: stale cache");
  if (ds.size() != 2 * dims.d_model)
    throw std::invalid_argument("encoder_backward: upstream size mismatch");
  std::size_t d = dims.d_model;

  std::vector<double> de(ds.begin(), ds.begin() + d);
  std::vector<double> dpsi(ds.begin() + d, ds.end());

  if (!cache.ncd) {
    mlp_backward(dims.ctx_spec(), params, "enc.ctx", cache.ctx, dpsi);
  }

  std::vector<double> dfuse_in =
      mlp_backward(dims.fuse_spec(), params, "enc.fuse", cache.fuse, de);
  std::vector<double> dfeat(dfuse_in.begin(), dfuse_in.begin() + d);
  std::vector<double> dh(dfuse_in.begin() + d, dfuse_in.end());
  mlp_backward(dims.feat_spec(), params, "enc.feat", cache.feat, dfeat);

  Tensor2D dK, dV;
  std::vector<double> dx_last(d, 0.0);
  attn_core_backward(dims.attn_spec(), params, "enc.attn", cache.attn,
                     dh.data(), dK, dV, dx_last);

  if (cache.used_pad) {
    const Tensor2D& Wk = params.value("enc.attn.Wk");
    const Tensor2D& Wv = params.value("enc.attn.Wv");
    const Tensor2D& pad = params.value("enc.pad");
    Tensor2D& dWk = params.grad("enc.attn.Wk");
    Tensor2D& dbk = params.grad("enc.attn.bk");
    Tensor2D& dWv = params.grad("enc.attn.Wv");
    Tensor2D& dbv = params.grad("enc.attn.bv");
    Tensor2D& dpad = params.grad("enc.pad");
    for (std::size_t r = 0; r < d; ++r) {
      double gk = dK.row(0)[r], gv = dV.row(0)[r];
      dbk.data[r] += gk;
      dbv.data[r] += gv;
      double* dwk = dWk.row(r);
      double* dwv = dWv.row(r);
      const double* wk = Wk.row(r);
      const double* wv = Wv.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        dwk[c] += gk * pad.data[c];
        dwv[c] += gv * pad.data[c];
        dpad.data[c] += gk * wk[c] + gv * wv[c];
      }
    }
    for (std::size_t c = 0; c < d; ++c) dpad.data[c] += dx_last[c];
    return;
  }

  EncoderProj local;
  if (!proj) {
    local = make_encoder_proj(params, dims);
    proj = &local;
  }
  std::size_t len = cache.E.rows;
  std::size_t ed = dims.entry_dim();

  // Grads w.r.t. the composed projections, then unfused onto Wk/Wv/P/biases.
  Tensor2D dKP(d, ed), dVP(d, ed);
  std::vector<double> dkb(d, 0.0), dvb(d, 0.0);
  for (std::size_t j = 0; j < len; ++j) {
    const double* e = cache.E.row(j);
    const double* dkj = dK.row(j);
    const double* dvj = dV.row(j);
    for (std::size_t r = 0; r < d; ++r) {
      double gk = dkj[r], gv = dvj[r];
      dkb[r] += gk;
      dvb[r] += gv;
      double* dkp = dKP.row(r);
      double* dvp = dVP.row(r);
      for (std::size_t c = 0; c < ed; ++c) {
        dkp[c] += gk * e[c];
        dvp[c] += gv * e[c];
      }
    }
  }

  const Tensor2D& P = params.value("enc.proj.W");
  const Tensor2D& bp = params.value("enc.proj.b");
  const Tensor2D& Wk = params.value("enc.attn.Wk");
  const Tensor2D& Wv = params.value("enc.attn.Wv");
  Tensor2D& dWk = params.grad("enc.attn.Wk");
  Tensor2D& dbk = params.grad("enc.attn.bk");
  Tensor2D& dWv = params.grad("enc.attn.Wv");
  Tensor2D& dbv = params.grad("enc.attn.bv");
  Tensor2D& dP = params.grad("enc.proj.W");
  Tensor2D& dbp = params.grad("enc.proj.b");

  // KP = Wk P: dWk += dKP P^T, dP += Wk^T dKP. Same for V.
  for (std::size_t r = 0; r < d; ++r) {
    const double* dkp = dKP.row(r);
    const double* dvp = dVP.row(r);
    double* dwk = dWk.row(r);
    double* dwv = dWv.row(r);
    for (std::size_t k = 0; k < d; ++k) {
      const double* pk = P.row(k);
      double acck = 0.0, accv = 0.0;
      for (std::size_t c = 0; c < ed; ++c) {
        acck += dkp[c] * pk[c];
        accv += dvp[c] * pk[c];
      }
      dwk[k] += acck;
      dwv[k] += accv;
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    double* dpr = dP.row(k);
    for (std::size_t r = 0; r < d; ++r) {
      double wkk = Wk.at(r, k);
      double wvk = Wv.at(r, k);
      const double* dkp = dKP.row(r);
      const double* dvp = dVP.row(r);
      for (std::size_t c = 0; c < ed; ++c)
        dpr[c] += wkk * dkp[c] + wvk * dvp[c];
    }
  }
  // kb = Wk bp + bk: route the bias grads.
  for (std::size_t r = 0; r < d; ++r) {
    double gk = dkb[r], gv = dvb[r];
    dbk.data[r] += gk;
    dbv.data[r] += gv;
    double* dwk = dWk.row(r);
    double* dwv = dWv.row(r);
    const double* wk = Wk.row(r);
    const double* wv = Wv.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      dwk[c] += gk * bp.data[c];
      dwv[c] += gv * bp.data[c];
      dbp.data[c] += gk * wk[c] + gv * wv[c];
    }
  }

  // x_last = P e_last + bp.
  const double* elast = cache.E.row(len - 1);
  for (std::size_t r = 0; r < d; ++r) {
    double g = dx_last[r];
    dbp.data[r] += g;
    double* dpr = dP.row(r);
    for (std::size_t c = 0; c < ed; ++c) dpr[c] += g * elast[c];
  }
}

}  // namespace retflow

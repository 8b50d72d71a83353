#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "retflow/nn.hpp"
#include "retflow/tensor.hpp"

namespace retflow {

// One interaction: the consumed item's embedding and the feedback vector
// observed for it. Entries are ordered oldest first, newest last.
struct HistEntry {
  std::vector<double> item_embedding;  // item_dim
  std::vector<double> feedback;        // num_behaviors
};

struct InteractionHistory {
  std::vector<HistEntry> entries;
};

struct HistoryView {
  const HistEntry* data = nullptr;
  std::size_t len = 0;

  HistoryView() = default;
  HistoryView(const HistEntry* d, std::size_t n) : data(d), len(n) {}
  explicit HistoryView(const InteractionHistory& h)
      : data(h.entries.data()), len(h.entries.size()) {}
};

struct UserFeatures {
  std::vector<double> v;  // d_feat
};

// s is always e_u ++ psi_u.
struct StateEmbedding {
  std::vector<double> e_u;
  std::vector<double> psi_u;
  std::vector<double> s;
};

struct EncoderDims {
  std::size_t d_model = 32;
  std::size_t num_heads = 4;
  std::size_t hidden = 128;
  std::size_t d_feat = 8;
  std::size_t num_behaviors = 3;
  std::size_t item_dim = 8;
  std::size_t hist_len = 50;      // attention window over the newest entries
  std::size_t stats_window = 10;  // feedback stats window behind psi_u

  std::size_t entry_dim() const { return item_dim + num_behaviors; }
  std::size_t state_dim() const { return 2 * d_model; }
  AttentionSpec attn_spec() const { return {d_model, num_heads}; }
  MLPSpec feat_spec() const {
    return {{d_feat, d_model}, Act::tanh, Act::identity};
  }
  MLPSpec fuse_spec() const {
    return {{2 * d_model, hidden, d_model}, Act::tanh, Act::identity};
  }
  MLPSpec ctx_spec() const {
    return {{d_feat + num_behaviors + 1, hidden, d_model}, Act::tanh,
            Act::identity};
  }
};

// Registers enc.proj.*, enc.pad, enc.attn.*, enc.feat.*, enc.fuse.*, enc.ctx.*.
void register_encoder(ParamSet& params, const EncoderDims& dims);

// Key/value projections composed with the entry projection. Valid until the
// underlying parameters change; recomputed on demand when absent.
struct EncoderProj {
  Tensor2D KP, VP;            // d_model x entry_dim
  std::vector<double> kb, vb;  // d_model
};

EncoderProj make_encoder_proj(const ParamSet& params, const EncoderDims& dims);

struct EncoderCache {
  bool valid = false;
  bool used_pad = false;
  bool ncd = false;
  Tensor2D E;  // entries in the attention window, newest last
  std::vector<double> x_last;
  AttnCoreCache attn;
  MlpCache feat, fuse, ctx;
  std::vector<double> fuse_in, ctx_in;
};

// Attention encoding of the interaction history (last position's output).
// Empty history is encoded as the single trainable pad token; histories
// longer than dims.hist_len are truncated to the most recent entries.
std::vector<double> encode_history(const EncoderDims& dims,
                                   const ParamSet& params, HistoryView hist,
                                   EncoderCache& cache,
                                   const EncoderProj* proj = nullptr);

// Full state: e_u from features + history attention through the fusion MLP,
// psi_u from features + feedback statistics through the context MLP,
// s = e_u ++ psi_u. ncd zeroes psi_u and detaches the context MLP.
StateEmbedding encode_state(const EncoderDims& dims, const ParamSet& params,
                            const UserFeatures& features, HistoryView hist,
                            bool ncd, EncoderCache& cache,
                            const EncoderProj* proj = nullptr);

// Accumulates parameter grads for everything encode_state touched.
// ds is dL/ds with length 2 * d_model.
void encoder_backward(const EncoderDims& dims, ParamSet& params,
                      const EncoderCache& cache, const std::vector<double>& ds,
                      const EncoderProj* proj = nullptr);

}  // namespace retflow

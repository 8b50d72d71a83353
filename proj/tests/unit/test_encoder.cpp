#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "retflow/encoder.hpp"
#include "retflow/nn.hpp"
#include "retflow/rng.hpp"

using namespace retflow;

namespace {

EncoderDims small_dims() {
  EncoderDims d;
  d.d_model = 8;
  d.num_heads = 2;
  d.hidden = 12;
  d.d_feat = 5;
  d.num_behaviors = 3;
  d.item_dim = 4;
  d.hist_len = 6;
  d.stats_window = 3;
  return d;
}

ParamSet make_params(const EncoderDims& d, std::uint64_t seed) {
  ParamSet p;
  register_encoder(p, d);
  RngStream rng(seed);
  glorot_init(p, rng);
  return p;
}

InteractionHistory random_history(const EncoderDims& d, std::size_t n,
                                  RngStream& rng) {
  InteractionHistory h;
  for (std::size_t i = 0; i < n; ++i) {
    HistEntry e;
    for (std::size_t c = 0; c < d.item_dim; ++c)
      e.item_embedding.push_back(rng.normal());
    for (std::size_t c = 0; c < d.num_behaviors; ++c)
      e.feedback.push_back(rng.uniform01() < 0.4 ? 1.0 : 0.0);
    h.entries.push_back(e);
  }
  return h;
}

UserFeatures random_features(const EncoderDims& d, RngStream& rng) {
  UserFeatures f;
  for (std::size_t c = 0; c < d.d_feat; ++c) f.v.push_back(rng.normal());
  return f;
}

// Oracle: project entries with the plain per-position path, then run the
// generic attention block.
std::vector<double> history_oracle(const EncoderDims& d, const ParamSet& p,
                                   const InteractionHistory& h) {
  std::size_t len = std::min(h.entries.size(), d.hist_len);
  const HistEntry* first = h.entries.data() + (h.entries.size() - len);
  const Tensor2D& P = p.value("enc.proj.W");
  const Tensor2D& bp = p.value("enc.proj.b");
  Tensor2D X(len, d.d_model);
  for (std::size_t j = 0; j < len; ++j) {
    std::vector<double> e;
    e.insert(e.end(), first[j].item_embedding.begin(),
             first[j].item_embedding.end());
    e.insert(e.end(), first[j].feedback.begin(), first[j].feedback.end());
    for (std::size_t r = 0; r < d.d_model; ++r) {
      double acc = bp.data[r];
      for (std::size_t c = 0; c < e.size(); ++c) acc += P.at(r, c) * e[c];
      X.row(j)[r] = acc;
    }
  }
  return attention_encode(d.attn_spec(), p, "enc.attn", X);
}

}  // namespace

TEST_CASE("empty history is encoded as the pad token") {
  EncoderDims d = small_dims();
  ParamSet p = make_params(d, 1);
  EncoderCache c;
  auto out = encode_history(d, p, HistoryView{}, c);

  Tensor2D pad_seq(1, d.d_model);
  for (std::size_t i = 0; i < d.d_model; ++i)
    pad_seq.row(0)[i] = p.value("enc.pad").data[i];
  auto oracle = attention_encode(d.attn_spec(), p, "enc.attn", pad_seq);
  REQUIRE(out.size() == d.d_model);
  for (std::size_t i = 0; i < d.d_model; ++i)
    CHECK(out[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("fused history encoding matches the generic attention path") {
  EncoderDims d = small_dims();
  ParamSet p = make_params(d, 2);
  RngStream rng(3);
  for (std::size_t n : {1u, 3u, 6u}) {
    InteractionHistory h = random_history(d, n, rng);
    EncoderCache c;
    auto fused = encode_history(d, p, HistoryView(h), c);
    auto oracle = history_oracle(d, p, h);
    for (std::size_t i = 0; i < d.d_model; ++i)
      CHECK(fused[i] == doctest::Approx(oracle[i]).epsilon(1e-10));
  }
}

TEST_CASE("history longer than the window is truncated to the newest entries") {
  EncoderDims d = small_dims();  // hist_len = 6
  ParamSet p = make_params(d, 4);
  RngStream rng(5);
  InteractionHistory full = random_history(d, 9, rng);
  InteractionHistory tail;
  tail.entries.assign(full.entries.end() - 6, full.entries.end());
  EncoderCache c1, c2;
  auto a = encode_history(d, p, HistoryView(full), c1);
  auto b = encode_history(d, p, HistoryView(tail), c2);
  for (std::size_t i = 0; i < d.d_model; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("entry order changes the encoding") {
  EncoderDims d = small_dims();
  ParamSet p = make_params(d, 6);
  RngStream rng(7);
  InteractionHistory h = random_history(d, 4, rng);
  InteractionHistory rev = h;
  std::reverse(rev.entries.begin(), rev.entries.end());
  EncoderCache c1, c2;
  auto a = encode_history(d, p, HistoryView(h), c1);
  auto b = encode_history(d, p, HistoryView(rev), c2);
  double diff = 0.0;
  for (std::size_t i = 0; i < d.d_model; ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 1e-8);
}

TEST_CASE("state embedding is the concatenation of its two halves") {
  EncoderDims d = small_dims();
  ParamSet p = make_params(d, 8);
  RngStream rng(9);
  InteractionHistory h = random_history(d, 5, rng);
  UserFeatures f = random_features(d, rng);
  EncoderCache c;
  StateEmbedding s = encode_state(d, p, f, HistoryView(h), false, c);
  REQUIRE(s.s.size() == 2 * d.d_model);
  REQUIRE(s.e_u.size() == d.d_model);
  REQUIRE(s.psi_u.size() == d.d_model);
  for (std::size_t i = 0; i < d.d_model; ++i) {
    CHECK(s.s[i] == s.e_u[i]);
    CHECK(s.s[d.d_model + i] == s.psi_u[i]);
  }
  EncoderCache c2;
  StateEmbedding s2 = encode_state(d, p, f, HistoryView(h), false, c2);
  for (std::size_t i = 0; i < s.s.size(); ++i) CHECK(s.s[i] == s2.s[i]);
}

TEST_CASE("feedback statistics only see the newest stats_window entries") {
  EncoderDims d = small_dims();  // stats_window = 3
  ParamSet p = make_params(d, 10);
  RngStream rng(11);
  InteractionHistory h = random_history(d, 5, rng);
  UserFeatures f = random_features(d, rng);
  InteractionHistory h2 = h;
  // Entry 1 is outside the stats window (newest 3 of 5) but inside the
  // attention window, so e_u moves and psi_u must not.
  h2.entries[1].feedback[0] = 1.0 - h2.entries[1].feedback[0];
  EncoderCache c1, c2;
  StateEmbedding a = encode_state(d, p, f, HistoryView(h), false, c1);
  StateEmbedding b = encode_state(d, p, f, HistoryView(h2), false, c2);
  double de = 0.0;
  for (std::size_t i = 0; i < d.d_model; ++i) {
    CHECK(a.psi_u[i] == b.psi_u[i]);
    de += std::abs(a.e_u[i] - b.e_u[i]);
  }
  CHECK(de > 1e-10);
}

TEST_CASE("ncd zeroes psi and keeps the context net detached") {
  EncoderDims d = small_dims();
  ParamSet p = make_params(d, 12);
  RngStream rng(13);
  InteractionHistory h = random_history(d, 4, rng);
  UserFeatures f = random_features(d, rng);
  EncoderCache c;
  StateEmbedding s = encode_state(d, p, f, HistoryView(h), true, c);
  for (double v : s.psi_u) CHECK(v == 0.0);

  std::vector<double> ds(2 * d.d_model, 1.0);
  encoder_backward(d, p, c, ds);
  for (const auto& [name, e] : p) {
    if (name.rfind("enc.ctx.", 0) == 0)
      for (double g : e.grad.data) CHECK(g == 0.0);
  }
  // Something else did get gradient.
  double total = 0.0;
  for (const auto& [name, e] : p)
    for (double g : e.grad.data) total += std::abs(g);
  CHECK(total > 0.0);
}

TEST_CASE("encoder gradients match central differences") {
  EncoderDims d = small_dims();
  ParamSet p = make_params(d, 14);
  RngStream rng(15);
  UserFeatures f = random_features(d, rng);
  std::vector<double> w;
  for (std::size_t i = 0; i < 2 * d.d_model; ++i)
    w.push_back(rng.uniform(-1.0, 1.0));

  SUBCASE("with history") {
    InteractionHistory h = random_history(d, 5, rng);
    auto fgrad = [&](ParamSet& ps) {
      EncoderCache c;
      StateEmbedding s = encode_state(d, ps, f, HistoryView(h), false, c);
      double loss = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) loss += w[i] * s.s[i];
      encoder_backward(d, ps, c, w);
      return loss;
    };
    RngStream pick(16);
    auto res = gradient_check(fgrad, p, 1e-5, 1e-6, pick, 64);
    INFO("worst ", res.worst_param, " err ", res.max_rel_error);
    CHECK(res.pass);
  }

  SUBCASE("empty history exercises the pad token") {
    auto fgrad = [&](ParamSet& ps) {
      EncoderCache c;
      StateEmbedding s = encode_state(d, ps, f, HistoryView{}, false, c);
      double loss = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) loss += w[i] * s.s[i];
      encoder_backward(d, ps, c, w);
      return loss;
    };
    RngStream pick(17);
    auto res = gradient_check(fgrad, p, 1e-5, 1e-6, pick, 64);
    INFO("worst ", res.worst_param, " err ", res.max_rel_error);
    CHECK(res.pass);
    // The pad token itself must receive gradient.
    p.zero_grads();
    fgrad(p);
    double padg = 0.0;
    for (double g : p.grad("enc.pad").data) padg += std::abs(g);
    CHECK(padg > 0.0);
  }
}

TEST_CASE("encoder rejects malformed inputs") {
  EncoderDims d = small_dims();
  ParamSet p = make_params(d, 18);
  EncoderCache c;
  UserFeatures bad;
  bad.v.assign(d.d_feat + 1, 0.0);
  CHECK_THROWS_AS(encode_state(d, p, bad, HistoryView{}, false, c),
                  std::invalid_argument);
  InteractionHistory h;
  HistEntry e;
  e.item_embedding.assign(d.item_dim - 1, 0.0);
  e.feedback.assign(d.num_behaviors, 0.0);
  h.entries.push_back(e);
  CHECK_THROWS_AS(encode_history(d, p, HistoryView(h), c),
                  std::invalid_argument);
  std::vector<double> ds(2 * d.d_model, 0.0);
  EncoderCache stale;
  CHECK_THROWS_AS(encoder_backward(d, p, stale, ds), std::invalid_argument);
}

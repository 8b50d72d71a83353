#include <doctest.h>

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "retflow/nn.hpp"
#include "retflow/rng.hpp"
#include "retflow/tensor.hpp"

using namespace retflow;

namespace {

// Independent re-implementation of one attention block for a single token:
// softmax over one key is 1, so out = x + Wo (Wv x + bv) + bo.
std::vector<double> single_token_oracle(const ParamSet& p, const std::string& pre,
                                        const std::vector<double>& x) {
  std::size_t d = x.size();
  const Tensor2D& Wv = p.value(pre + ".Wv");
  const Tensor2D& bv = p.value(pre + ".bv");
  const Tensor2D& Wo = p.value(pre + ".Wo");
  const Tensor2D& bo = p.value(pre + ".bo");
  std::vector<double> v(d, 0.0), out(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    double acc = bv.data[r];
    for (std::size_t c = 0; c < d; ++c) acc += Wv.at(r, c) * x[c];
    v[r] = acc;
  }
  for (std::size_t r = 0; r < d; ++r) {
    double acc = bo.data[r] + x[r];
    for (std::size_t c = 0; c < d; ++c) acc += Wo.at(r, c) * v[c];
    out[r] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("mlp identity-weight relu pipeline") {
  MLPSpec spec{{2, 2, 2}, Act::relu, Act::identity};
  ParamSet p;
  register_mlp(p, "m", spec);
  p.value("m.W0").at(0, 0) = 1.0;
  p.value("m.W0").at(1, 1) = 1.0;
  p.value("m.W1").at(0, 0) = 1.0;
  p.value("m.W1").at(1, 1) = 1.0;
  MlpCache c;
  auto out = mlp_forward(spec, p, "m", {-1.0, 2.0}, c);
  CHECK(out[0] == doctest::Approx(0.0));
  CHECK(out[1] == doctest::Approx(2.0));
}

TEST_CASE("mlp zero weights yield activation of bias") {
  MLPSpec spec{{3, 2}, Act::tanh, Act::sigmoid};
  ParamSet p;
  register_mlp(p, "m", spec);
  p.value("m.b0").data = {0.7, -1.3};
  MlpCache c;
  auto out = mlp_forward(spec, p, "m", {4.0, -2.0, 0.5}, c);
  CHECK(out[0] == doctest::Approx(sigmoid(0.7)).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(sigmoid(-1.3)).epsilon(1e-12));
}

TEST_CASE("mlp sigmoid output clamps its pre-activation") {
  MLPSpec spec{{1, 1}, Act::tanh, Act::sigmoid};
  ParamSet p;
  register_mlp(p, "m", spec);
  p.value("m.W0").data = {100.0};
  MlpCache c;
  auto out = mlp_forward(spec, p, "m", {10.0}, c);
  CHECK(out[0] == doctest::Approx(sigmoid(30.0)).epsilon(1e-14));
  CHECK(std::log(out[0]) == doctest::Approx(0.0).epsilon(1e-10));
  auto out2 = mlp_forward(spec, p, "m", {-10.0}, c);
  CHECK(out2[0] == doctest::Approx(sigmoid(-30.0)).epsilon(1e-14));
  CHECK(std::isfinite(std::log(out2[0])));
}

TEST_CASE("mlp gradients match central differences") {
  RngStream rng(11);
  for (Act outact : {Act::identity, Act::sigmoid, Act::softplus}) {
    MLPSpec spec{{4, 6, 3}, Act::tanh, outact};
    ParamSet p;
    register_mlp(p, "m", spec);
    glorot_init(p, rng);
    std::vector<double> input = {0.3, -0.9, 1.1, 0.4};
    std::vector<double> w = {0.7, -1.2, 0.5};
    auto f = [&](ParamSet& ps) {
      MlpCache c;
      auto out = mlp_forward(spec, ps, "m", input, c);
      double loss = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) loss += w[i] * out[i];
      mlp_backward(spec, ps, "m", c, w);
      return loss;
    };
    RngStream pick(5);
    auto res = gradient_check(f, p, 1e-5, 1e-6, pick, 64);
    INFO("output act ", int(outact), " worst ", res.worst_param);
    CHECK(res.pass);
  }
}

TEST_CASE("mlp relu gradients away from kinks") {
  RngStream rng(3);
  MLPSpec spec{{3, 5, 2}, Act::relu, Act::identity};
  ParamSet p;
  register_mlp(p, "m", spec);
  glorot_init(p, rng);
  std::vector<double> input = {0.8, -0.6, 1.3};
  auto f = [&](ParamSet& ps) {
    MlpCache c;
    auto out = mlp_forward(spec, ps, "m", input, c);
    double loss = out[0] + 2.0 * out[1];
    mlp_backward(spec, ps, "m", c, {1.0, 2.0});
    return loss;
  };
  RngStream pick(9);
  auto res = gradient_check(f, p, 1e-6, 1e-5, pick, 64);
  CHECK(res.pass);
}

TEST_CASE("backprop accumulation is additive") {
  RngStream rng(21);
  MLPSpec spec{{3, 4, 2}, Act::tanh, Act::identity};
  ParamSet p;
  register_mlp(p, "m", spec);
  glorot_init(p, rng);
  std::vector<double> x = {0.2, -0.4, 0.9};
  std::vector<double> g1 = {0.5, -1.0}, g2 = {-0.3, 0.8};

  MlpCache c;
  mlp_forward(spec, p, "m", x, c);
  auto dx1 = mlp_backward(spec, p, "m", c, g1);
  auto dx2 = mlp_backward(spec, p, "m", c, g2);
  std::map<std::string, Tensor2D> twice;
  for (auto& [name, e] : p) twice.emplace(name, e.grad);
  p.zero_grads();

  std::vector<double> gsum = {g1[0] + g2[0], g1[1] + g2[1]};
  mlp_forward(spec, p, "m", x, c);
  auto dxs = mlp_backward(spec, p, "m", c, gsum);
  for (auto& [name, e] : p)
    for (std::size_t i = 0; i < e.grad.size(); ++i)
      CHECK(e.grad.data[i] ==
            doctest::Approx(twice.at(name).data[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < dxs.size(); ++i)
    CHECK(dxs[i] == doctest::Approx(dx1[i] + dx2[i]).epsilon(1e-12));
}

TEST_CASE("mlp backward rejects mismatched upstream and stale cache") {
  MLPSpec spec{{2, 3}, Act::tanh, Act::identity};
  ParamSet p;
  register_mlp(p, "m", spec);
  MlpCache c;
  mlp_forward(spec, p, "m", {1.0, 2.0}, c);
  CHECK_THROWS_AS(mlp_backward(spec, p, "m", c, {1.0}), std::invalid_argument);
  MlpCache empty;
  CHECK_THROWS_AS(mlp_backward(spec, p, "m", empty, {1.0, 1.0, 1.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(mlp_forward(spec, p, "m", {1.0}, c), std::invalid_argument);
}

TEST_CASE("attention single token reduces to value path plus residual") {
  AttentionSpec spec{4, 2};
  ParamSet p;
  register_attention(p, "a", spec);
  RngStream rng(17);
  glorot_init(p, rng);
  std::vector<double> x = {0.3, -0.7, 1.2, 0.1};
  Tensor2D seq(1, 4);
  for (int i = 0; i < 4; ++i) seq.row(0)[i] = x[i];
  auto out = attention_encode(spec, p, "a", seq);
  auto expect = single_token_oracle(p, "a", x);
  for (int i = 0; i < 4; ++i)
    CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("attention over two identical tokens matches the single token") {
  AttentionSpec spec{8, 4};
  ParamSet p;
  register_attention(p, "a", spec);
  RngStream rng(23);
  glorot_init(p, rng);
  Tensor2D one(1, 8), two(2, 8);
  RngStream xs(5);
  for (int i = 0; i < 8; ++i) {
    double v = xs.normal();
    one.row(0)[i] = v;
    two.row(0)[i] = v;
    two.row(1)[i] = v;
  }
  auto a = attention_encode(spec, p, "a", one);
  auto b = attention_encode(spec, p, "a", two);
  for (int i = 0; i < 8; ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-14));
}

TEST_CASE("attention encode is bit-identical across reruns") {
  AttentionSpec spec{8, 2};
  ParamSet p;
  register_attention(p, "a", spec);
  RngStream rng(31);
  glorot_init(p, rng);
  Tensor2D seq(5, 8);
  RngStream xs(6);
  for (auto& v : seq.data) v = xs.normal();
  auto a = attention_encode(spec, p, "a", seq);
  auto b = attention_encode(spec, p, "a", seq);
  for (int i = 0; i < 8; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("attention parameter gradients match central differences") {
  AttentionSpec spec{6, 3};
  ParamSet p;
  register_attention(p, "a", spec);
  RngStream rng(41);
  glorot_init(p, rng);
  Tensor2D seq(4, 6);
  RngStream xs(7);
  for (auto& v : seq.data) v = 0.5 * xs.normal();
  std::vector<double> w = {1.0, -0.5, 0.3, 0.8, -1.1, 0.2};
  auto f = [&](ParamSet& ps) {
    AttnCache c;
    auto out = attention_encode(spec, ps, "a", seq, &c);
    double loss = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) loss += w[i] * out[i];
    attention_backward(spec, ps, "a", c, w);
    return loss;
  };
  RngStream pick(8);
  auto res = gradient_check(f, p, 1e-5, 1e-6, pick, 64);
  INFO("worst ", res.worst_param, " err ", res.max_rel_error);
  CHECK(res.pass);
}

TEST_CASE("attention input gradients match central differences") {
  AttentionSpec spec{4, 2};
  ParamSet p;
  register_attention(p, "a", spec);
  RngStream rng(43);
  glorot_init(p, rng);
  Tensor2D seq(3, 4);
  RngStream xs(9);
  for (auto& v : seq.data) v = 0.4 * xs.normal();
  std::vector<double> w = {0.9, -0.2, 0.6, -1.0};

  AttnCache c;
  auto out = attention_encode(spec, p, "a", seq, &c);
  (void)out;
  Tensor2D dX = attention_backward(spec, p, "a", c, w);

  double eps = 1e-6;
  for (std::size_t i = 0; i < seq.data.size(); ++i) {
    double saved = seq.data[i];
    seq.data[i] = saved + eps;
    auto op = attention_encode(spec, p, "a", seq);
    seq.data[i] = saved - eps;
    auto om = attention_encode(spec, p, "a", seq);
    seq.data[i] = saved;
    double lp = 0.0, lm = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      lp += w[k] * op[k];
      lm += w[k] * om[k];
    }
    double fd = (lp - lm) / (2.0 * eps);
    CHECK(dX.data[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("adam first step matches the closed form") {
  ParamSet p;
  p.add("w", 1, 1);
  p.value("w").data[0] = 0.0;
  p.grad("w").data[0] = 1.0;
  AdamState st = make_adam_state(p, [](const std::string&) { return true; });
  adam_step(p, st, 0.1);
  double expect = -0.1 * (1.0 / (1.0 + 1e-8));
  CHECK(p.value("w").data[0] == doctest::Approx(expect).epsilon(1e-15));
  CHECK(p.grad("w").data[0] == 0.0);
  CHECK(st.step_count == 1);
}

TEST_CASE("adam step magnitude stays bounded by the learning rate") {
  ParamSet p;
  p.add("w", 1, 1);
  AdamState st = make_adam_state(p, [](const std::string&) { return true; });
  double lr = 0.01;
  for (int i = 0; i < 200; ++i) {
    double before = p.value("w").data[0];
    p.grad("w").data[0] = 0.37;
    adam_step(p, st, lr);
    double delta = p.value("w").data[0] - before;
    CHECK(std::abs(delta) <= lr * 1.001);
  }
}

TEST_CASE("adam rejects non-finite gradients with diagnostics") {
  ParamSet p;
  p.add("layer.W0", 1, 2);
  AdamState st = make_adam_state(p, [](const std::string&) { return true; });
  p.grad("layer.W0").data[1] = std::nan("");
  bool threw = false;
  try {
    adam_step(p, st, 0.1);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("layer.W0") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("adam updates only the tensors its state tracks") {
  ParamSet p;
  p.add("a.W0", 1, 1);
  p.add("b.W0", 1, 1);
  p.grad("a.W0").data[0] = 1.0;
  p.grad("b.W0").data[0] = 1.0;
  AdamState st = make_adam_state(
      p, [](const std::string& n) { return n.rfind("a.", 0) == 0; });
  adam_step(p, st, 0.1);
  CHECK(p.value("a.W0").data[0] != 0.0);
  CHECK(p.value("b.W0").data[0] == 0.0);
  CHECK(p.grad("b.W0").data[0] == 1.0);  // untouched
}

TEST_CASE("gradient_check on quadratic, linear, and broken gradients") {
  ParamSet p;
  p.add("x", 1, 1);
  p.value("x").data[0] = 3.0;

  auto quad = [](ParamSet& ps) {
    double x = ps.value("x").data[0];
    ps.grad("x").data[0] += 2.0 * x;
    return x * x;
  };
  RngStream r1(1);
  auto res = gradient_check(quad, p, 1e-4, 1e-6, r1);
  CHECK(res.pass);
  CHECK(res.max_rel_error <= 1e-8);

  auto lin = [](ParamSet& ps) {
    double x = ps.value("x").data[0];
    ps.grad("x").data[0] += 4.0;
    return 4.0 * x;
  };
  RngStream r2(1);
  res = gradient_check(lin, p, 1e-4, 1e-6, r2);
  CHECK(res.max_rel_error <= 1e-10);

  auto broken = [](ParamSet& ps) {
    double x = ps.value("x").data[0];
    ps.grad("x").data[0] += 4.0 * x;  // doubled on purpose
    return x * x;
  };
  RngStream r3(1);
  res = gradient_check(broken, p, 1e-4, 1e-6, r3);
  CHECK_FALSE(res.pass);
  CHECK(res.max_rel_error == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("glorot init is bounded, zero-biased, and seed-reproducible") {
  auto build = [](std::uint64_t seed) {
    ParamSet p;
    MLPSpec spec{{8, 16, 4}, Act::tanh, Act::identity};
    register_mlp(p, "m", spec);
    RngStream rng(seed);
    glorot_init(p, rng);
    return p;
  };
  ParamSet a = build(42), b = build(42), c = build(43);
  double bound0 = std::sqrt(6.0 / (8 + 16));
  for (double v : a.value("m.W0").data) CHECK(std::abs(v) <= bound0);
  for (double v : a.value("m.b0").data) CHECK(v == 0.0);
  bool same = true, diff = false;
  for (std::size_t i = 0; i < a.value("m.W0").size(); ++i) {
    same = same && a.value("m.W0").data[i] == b.value("m.W0").data[i];
    diff = diff || a.value("m.W0").data[i] != c.value("m.W0").data[i];
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("rng streams are deterministic and offset-disjoint") {
  RngStream a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream w = make_stream(5, kWorldStream);
  RngStream init = make_stream(5, kInitStream);
  CHECK(w.next_u64() != init.next_u64());
  RngStream n(19);
  double mean = 0.0, var = 0.0;
  const int N = 100000;
  std::vector<double> xs(N);
  for (int i = 0; i < N; ++i) {
    xs[i] = n.normal();
    mean += xs[i];
  }
  mean /= N;
  for (int i = 0; i < N; ++i) var += (xs[i] - mean) * (xs[i] - mean);
  var /= N;
  CHECK(std::abs(mean) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

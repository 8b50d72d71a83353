#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "retflow/rng.hpp"
#include "retflow/tabular.hpp"

using namespace retflow;

namespace {

// Independent oracle: terminal probability of each leaf as an explicit
// product of per-level softmax probabilities along its root path, with the
// softmax recomputed in long double and without max subtraction.
std::vector<double> path_product_terminals(const TreeEnv& env,
                                           const TabularGFN& model) {
  const std::size_t b = env.branching;
  std::vector<double> out(env.num_leaves());
  for (std::size_t k = 0; k < env.num_leaves(); ++k) {
    // Base-b digits of k, most significant first, give the branch choices.
    std::vector<std::size_t> digits(env.depth);
    std::size_t rem = k;
    for (std::size_t level = env.depth; level-- > 0;) {
      digits[level] = rem % b;
      rem /= b;
    }
    long double p = 1.0L;
    std::size_t node = 0;
    for (std::size_t level = 0; level < env.depth; ++level) {
      long double z = 0.0L;
      for (std::size_t j = 0; j < b; ++j) {
        z += std::exp(static_cast<long double>(model.logits[node * b + j]));
      }
      const long double pj =
          std::exp(static_cast<long double>(
              model.logits[node * b + digits[level]])) /
          z;
      p *= pj;
      node = node * b + 1 + digits[level];
    }
    out[k] = static_cast<double>(p);
  }
  return out;
}

double oracle_tv(const TreeEnv& env, const TabularGFN& model) {
  const std::vector<double> p = path_product_terminals(env, model);
  double z = 0.0;
  for (double r : env.terminal_rewards) z += r;
  double tv = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    tv += std::abs(p[k] - env.terminal_rewards[k] / z);
  }
  return 0.5 * tv;
}

}  // namespace

TEST_CASE("tree construction validates shape and rewards") {
  const TreeEnv e22 = build_tree_env(2, 2, {1.0, 2.0, 3.0, 4.0});
  CHECK(e22.num_leaves() == 4);
  CHECK(e22.num_internal() == 3);
  CHECK(e22.num_nodes() == 7);

  const TreeEnv e13 = build_tree_env(1, 3, {1.0, 1.0, 1.0});
  CHECK(e13.num_leaves() == 3);
  CHECK(e13.num_internal() == 1);

  const TreeEnv e23 = build_tree_env(2, 3, std::vector<double>(9, 1.0));
  CHECK(e23.num_internal() == 4);
  CHECK(e23.num_nodes() == 13);

  CHECK_THROWS_AS(build_tree_env(2, 2, {1.0, 2.0, 3.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_tree_env(1, 2, {1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_tree_env(1, 2, {1.0, -2.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_tree_env(0, 2, {}), std::invalid_argument);
  CHECK_THROWS_AS(build_tree_env(2, 1, {1.0}), std::invalid_argument);
}

TEST_CASE("analytic solution has zero loss and conserved flow") {
  RngStream rng(3);
  std::vector<double> rewards(8);
  for (double& r : rewards) r = rng.uniform(0.1, 10.0);
  const TreeEnv env = build_tree_env(3, 2, rewards);
  const TabularGFN m = exact_solution(env);

  CHECK(tabular_db_loss(env, m) <= 1e-20);
  CHECK(terminal_tv(env, m) <= 1e-12);

  // Flow into every internal state equals the flow out of it.
  const std::size_t internal = env.num_internal();
  for (std::size_t s = 0; s < internal; ++s) {
    const double f = std::exp(m.log_flow[s]);
    double children = 0.0;
    for (std::size_t j = 0; j < env.branching; ++j) {
      children += std::exp(m.log_flow[s * env.branching + 1 + j]);
    }
    CHECK(std::abs(f - children) <= 1e-12 * f);
  }
  for (std::size_t k = 0; k < env.num_leaves(); ++k) {
    CHECK(std::exp(m.log_flow[internal + k]) ==
          doctest::Approx(rewards[k]).epsilon(1e-14));
  }
}

TEST_CASE("terminal distribution matches the path-product oracle") {
  RngStream rng(7);
  std::vector<double> rewards(27);
  for (double& r : rewards) r = rng.uniform(0.1, 10.0);
  const TreeEnv env = build_tree_env(3, 3, rewards);

  TabularGFN m = make_tabular(env);
  for (double& v : m.logits) v = rng.normal();
  for (double& v : m.log_flow) v = rng.normal();

  CHECK(terminal_tv(env, m) ==
        doctest::Approx(oracle_tv(env, m)).epsilon(1e-12));

  // Probabilities from marginalization sum to one over the leaves.
  const std::vector<double> p = path_product_terminals(env, m);
  double sum = 0.0;
  for (double v : p) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("uniform policy tv examples") {
  const TreeEnv uniform_env = build_tree_env(2, 2, {1.5, 1.5, 1.5, 1.5});
  CHECK(terminal_tv(uniform_env, make_tabular(uniform_env)) <= 1e-15);

  const TreeEnv skew = build_tree_env(1, 2, {3.0, 1.0});
  CHECK(terminal_tv(skew, make_tabular(skew)) ==
        doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("tv stays within the total variation bounds") {
  RngStream rng(13);
  std::vector<double> rewards(9);
  for (double& r : rewards) r = rng.uniform(0.1, 10.0);
  const TreeEnv env = build_tree_env(2, 3, rewards);
  for (int trial = 0; trial < 20; ++trial) {
    TabularGFN m = make_tabular(env);
    for (double& v : m.logits) v = 3.0 * rng.normal();
    const double tv = terminal_tv(env, m);
    CHECK(tv >= 0.0);
    CHECK(tv <= 1.0);
  }
}

TEST_CASE("training matches terminal probabilities to rewards") {
  const TreeEnv env = build_tree_env(1, 2, {3.0, 1.0});
  RngStream rng(make_stream(7, kSampleStream));
  const TabularGFN m = train_tabular_db(env, 4000, 0.1, rng);
  const std::vector<double> p = forward_probs(m, 0);
  CHECK(std::abs(p[0] - 0.75) <= 0.02);
  CHECK(std::abs(p[1] - 0.25) <= 0.02);
  CHECK(terminal_tv(env, m) <= 0.02);
}

TEST_CASE("training on uniform rewards stays near the uniform policy") {
  const TreeEnv env = build_tree_env(2, 3, std::vector<double>(9, 2.0));
  RngStream rng(make_stream(11, kSampleStream));
  const TabularGFN m = train_tabular_db(env, 6000, 0.1, rng);
  for (std::size_t s = 0; s < env.num_internal(); ++s) {
    const std::vector<double> p = forward_probs(m, s);
    for (double prob : p) CHECK(std::abs(prob - 1.0 / 3.0) <= 0.02);
  }
  CHECK(terminal_tv(env, m) <= 0.03);
}

TEST_CASE("training reduces the detailed balance loss on a deeper tree") {
  const TreeEnv env = build_tree_env(2, 2, {1.0, 2.0, 3.0, 4.0});
  RngStream rng(make_stream(0, kSampleStream));
  const TabularGFN m = train_tabular_db(env, 8000, 0.1, rng);
  CHECK(tabular_db_loss(env, m) < tabular_db_loss(env, make_tabular(env)));
  CHECK(terminal_tv(env, m) <= 0.02);
}

TEST_CASE("training is deterministic in the seed") {
  const TreeEnv env = build_tree_env(2, 2, {1.0, 2.0, 3.0, 4.0});
  RngStream a(42);
  RngStream b(42);
  const TabularGFN ma = train_tabular_db(env, 500, 0.1, a);
  const TabularGFN mb = train_tabular_db(env, 500, 0.1, b);
  CHECK(ma.logits == mb.logits);
  CHECK(ma.log_flow == mb.log_flow);

  CHECK_THROWS_AS(train_tabular_db(env, 0, 0.1, a), std::invalid_argument);
}

#include "retflow/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retflow {

namespace {

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t out = 1;
  for (std::size_t i = 0; i < exp; ++i) out *= base;
  return out;
}

// Softmax of one logit row, max-subtracted.
std::vector<double> softmax_row(const double* logits, std::size_t b) {
  double mx = logits[0];
  for (std::size_t j = 1; j < b; ++j) mx = std::max(mx, logits[j]);
  std::vector<double> p(b);
  double z = 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    p[j] = std::exp(logits[j] - mx);
    z += p[j];
  }
  for (std::size_t j = 0; j < b; ++j) p[j] /= z;
  return p;
}

}  // namespace

std::size_t TreeEnv::num_leaves() const { return ipow(branching, depth); }

std::size_t TreeEnv::num_internal() const {
  return (num_leaves() - 1) / (branching - 1);
}

TreeEnv build_tree_env(std::size_t depth, std::size_t branching,
                       const std::vector<double>& rewards) {
  if (depth == 0) throw std::invalid_argument("tree depth must be >= 1");
  if (branching < 2) throw std::invalid_argument("branching must be >= 2");
  TreeEnv env;
  env.depth = depth;
  env.branching = branching;
  if (rewards.size() != env.num_leaves()) {
    throw std::invalid_argument("terminal reward count must be branching^depth");
  }
  for (double r : rewards) {
    if (!(r > 0.0)) throw std::invalid_argument("terminal rewards must be > 0");
  }
  env.terminal_rewards = rewards;
  return env;
}

TabularGFN make_tabular(const TreeEnv& env) {
  TabularGFN m;
  m.depth = env.depth;
  m.branching = env.branching;
  m.logits.assign(env.num_internal() * env.branching, 0.0);
  m.log_flow.assign(env.num_nodes(), 0.0);
  return m;
}

std::vector<double> forward_probs(const TabularGFN& model, std::size_t node) {
  const std::size_t b = model.branching;
  return softmax_row(model.logits.data() + node * b, b);
}

TabularGFN train_tabular_db(const TreeEnv& env, std::size_t steps, double lr,
                            RngStream& rng) {
  if (steps == 0) throw std::invalid_argument("steps must be >= 1");
  TabularGFN m = make_tabular(env);
  const std::size_t b = env.branching;
  const std::size_t internal = env.num_internal();

  std::vector<double> grad_logits(m.logits.size());
  std::vector<double> grad_flow(m.log_flow.size());
  std::vector<std::size_t> path_nodes(env.depth);
  std::vector<std::size_t> path_choices(env.depth);

  for (std::size_t step = 0; step < steps; ++step) {
    // Sample one root-to-leaf trajectory from the current policy.
    std::size_t node = 0;
    for (std::size_t level = 0; level < env.depth; ++level) {
      const std::vector<double> p = softmax_row(m.logits.data() + node * b, b);
      const double u = rng.uniform01();
      double acc = 0.0;
      std::size_t choice = b - 1;
      for (std::size_t j = 0; j < b; ++j) {
        acc += p[j];
        if (u < acc) {
          choice = j;
          break;
        }
      }
      path_nodes[level] = node;
      path_choices[level] = choice;
      node = node * b + 1 + choice;
    }
    const std::size_t leaf = node;

    std::fill(grad_logits.begin(), grad_logits.end(), 0.0);
    std::fill(grad_flow.begin(), grad_flow.end(), 0.0);

    // Edge residuals u = log F(s) + log P_F - log F(s'); unique parent so
    // the backward term is log 1 = 0.
    for (std::size_t level = 0; level < env.depth; ++level) {
      const std::size_t s = path_nodes[level];
      const std::size_t choice = path_choices[level];
      const std::size_t child = s * b + 1 + choice;
      const std::vector<double> p = softmax_row(m.logits.data() + s * b, b);
      const double res =
          m.log_flow[s] + std::log(p[choice]) - m.log_flow[child];
      const double g = 2.0 * res;
      grad_flow[s] += g;
      grad_flow[child] -= g;
      for (std::size_t j = 0; j < b; ++j) {
        grad_logits[s * b + j] += g * ((j == choice ? 1.0 : 0.0) - p[j]);
      }
    }

    // Terminal match against the leaf reward.
    const double term =
        m.log_flow[leaf] - std::log(env.terminal_rewards[leaf - internal]);
    grad_flow[leaf] += 2.0 * term;

    for (std::size_t i = 0; i < m.logits.size(); ++i) {
      m.logits[i] -= lr * grad_logits[i];
    }
    for (std::size_t i = 0; i < m.log_flow.size(); ++i) {
      m.log_flow[i] -= lr * grad_flow[i];
    }
  }
  return m;
}

double tabular_db_loss(const TreeEnv& env, const TabularGFN& model) {
  const std::size_t b = env.branching;
  const std::size_t internal = env.num_internal();
  double total = 0.0;
  for (std::size_t s = 0; s < internal; ++s) {
    const std::vector<double> p = softmax_row(model.logits.data() + s * b, b);
    for (std::size_t j = 0; j < b; ++j) {
      const std::size_t child = s * b + 1 + j;
      const double res =
          model.log_flow[s] + std::log(p[j]) - model.log_flow[child];
      total += res * res;
    }
  }
  for (std::size_t k = 0; k < env.num_leaves(); ++k) {
    const double term =
        model.log_flow[internal + k] - std::log(env.terminal_rewards[k]);
    total += term * term;
  }
  return total;
}

TabularGFN exact_solution(const TreeEnv& env) {
  TabularGFN m = make_tabular(env);
  const std::size_t b = env.branching;
  const std::size_t internal = env.num_internal();
  std::vector<double> flow(env.num_nodes(), 0.0);
  for (std::size_t k = 0; k < env.num_leaves(); ++k) {
    flow[internal + k] = env.terminal_rewards[k];
  }
  for (std::size_t s = internal; s-- > 0;) {
    double sum = 0.0;
    for (std::size_t j = 0; j < b; ++j) sum += flow[s * b + 1 + j];
    flow[s] = sum;
  }
  for (std::size_t i = 0; i < env.num_nodes(); ++i) {
    m.log_flow[i] = std::log(flow[i]);
  }
  for (std::size_t s = 0; s < internal; ++s) {
    for (std::size_t j = 0; j < b; ++j) {
      m.logits[s * b + j] = std::log(flow[s * b + 1 + j]);
    }
  }
  return m;
}

double terminal_tv(const TreeEnv& env, const TabularGFN& model) {
  const std::size_t b = env.branching;
  const std::size_t internal = env.num_internal();
  std::vector<double> prob(env.num_nodes(), 0.0);
  prob[0] = 1.0;
  for (std::size_t s = 0; s < internal; ++s) {
    const std::vector<double> p = softmax_row(model.logits.data() + s * b, b);
    for (std::size_t j = 0; j < b; ++j) prob[s * b + 1 + j] = prob[s] * p[j];
  }
  double reward_sum = 0.0;
  for (double r : env.terminal_rewards) reward_sum += r;
  double tv = 0.0;
  for (std::size_t k = 0; k < env.num_leaves(); ++k) {
    tv += std::abs(prob[internal + k] - env.terminal_rewards[k] / reward_sum);
  }
  return 0.5 * tv;
}

}  // namespace retflow

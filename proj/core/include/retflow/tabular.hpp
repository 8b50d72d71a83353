#pragma once

#include <cstddef>
#include <vector>

#include "retflow/rng.hpp"

namespace retflow {

// Complete b-ary tree in heap order: node 0 is the root, children of
// internal node i are b*i + 1 ... b*i + b, leaves occupy the last b^D slots.
struct TreeEnv {
  std::size_t depth = 1;
  std::size_t branching = 2;
  std::vector<double> terminal_rewards;  // one per leaf, all > 0

  std::size_t num_leaves() const;
  std::size_t num_internal() const;
  std::size_t num_nodes() const { return num_internal() + num_leaves(); }
};

TreeEnv build_tree_env(std::size_t depth, std::size_t branching,
                       const std::vector<double>& rewards);

// Discrete flow model on a TreeEnv: forward logits per internal node
// (length b each, flattened) and a log-flow scalar per node. The backward
// policy is identically 1 because every node has a unique parent.
struct TabularGFN {
  std::size_t depth = 0;
  std::size_t branching = 0;
  std::vector<double> logits;    // num_internal * b
  std::vector<double> log_flow;  // num_nodes
};

TabularGFN make_tabular(const TreeEnv& env);  // zero-initialized

// Forward probabilities at one internal node (softmax over its logits).
std::vector<double> forward_probs(const TabularGFN& model, std::size_t node);

// On-policy SGD on the detailed-balance residuals along sampled paths plus
// the terminal match (log F(leaf) - log R)^2. No offsets; exact regime.
TabularGFN train_tabular_db(const TreeEnv& env, std::size_t steps, double lr,
                            RngStream& rng);

// Total squared residual over every edge and every leaf; 0 at the optimum.
double tabular_db_loss(const TreeEnv& env, const TabularGFN& model);

// Analytic optimum: F = subtree reward sums, logits = log child flows.
TabularGFN exact_solution(const TreeEnv& env);

// Exact terminal distribution by recursive marginalization, then
// 1/2 sum |p_leaf - R_leaf / sum R|.
double terminal_tv(const TreeEnv& env, const TabularGFN& model);

}  // namespace retflow

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "retflow/policy.hpp"
#include "retflow/rng.hpp"

namespace retflow {

// Uniform on [-1, 1] per coordinate.
ActionVector random_act(std::size_t d_action, RngStream& rng);

// Cross-entropy search over a constant per-episode action.
struct CemState {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::size_t population = 64;
  double elite_fraction = 0.25;
  double sigma_min = 0.02;
};

CemState make_cem_state(std::size_t d_action);

// Rank given samples by return (ties keep sample order), refit mu/sigma to
// the top ceil(elite_fraction * N); sigma floored at sigma_min.
CemState cem_refit(const CemState& state,
                   const std::vector<ActionVector>& samples,
                   const std::vector<double>& returns);

// Draw a population from N(mu, sigma), evaluate, and refit.
CemState cem_iteration(const CemState& state,
                       const std::function<double(const ActionVector&)>& evaluate,
                       RngStream& rng);

}  // namespace retflow

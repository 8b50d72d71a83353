#include "retflow/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace retflow {

ActionVector random_act(std::size_t d_action, RngStream& rng) {
  ActionVector a;
  a.a.resize(d_action);
  for (double& x : a.a) x = rng.uniform(-1.0, 1.0);
  return a;
}

CemState make_cem_state(std::size_t d_action) {
  CemState s;
  s.mu.assign(d_action, 0.0);
  s.sigma.assign(d_action, 0.5);
  return s;
}

CemState cem_refit(const CemState& state,
                   const std::vector<ActionVector>& samples,
                   const std::vector<double>& returns) {
  if (samples.empty() || samples.size() != returns.size())
    throw std::invalid_argument("cem_refit: sample/return size mismatch");
  std::size_t n = samples.size();
  std::size_t elites = std::size_t(
      std::ceil(state.elite_fraction * double(n)));
  if (elites < 1 || elites > n)
    throw std::invalid_argument("cem_refit: bad elite fraction");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return returns[a] > returns[b];
  });

  std::size_t d = state.mu.size();
  CemState out = state;
  out.mu.assign(d, 0.0);
  out.sigma.assign(d, 0.0);
  for (std::size_t e = 0; e < elites; ++e) {
    const std::vector<double>& a = samples[order[e]].a;
    if (a.size() != d)
      throw std::invalid_argument("cem_refit: action dimension mismatch");
    for (std::size_t c = 0; c < d; ++c) out.mu[c] += a[c];
  }
  for (double& m : out.mu) m /= double(elites);
  for (std::size_t e = 0; e < elites; ++e) {
    const std::vector<double>& a = samples[order[e]].a;
    for (std::size_t c = 0; c < d; ++c) {
      double dv = a[c] - out.mu[c];
      out.sigma[c] += dv * dv;
    }
  }
  for (double& s : out.sigma)
    s = std::max(std::sqrt(s / double(elites)), state.sigma_min);
  return out;
}

CemState cem_iteration(const CemState& state,
                       const std::function<double(const ActionVector&)>& evaluate,
                       RngStream& rng) {
  std::size_t d = state.mu.size();
  std::vector<ActionVector> samples(state.population);
  std::vector<double> returns(state.population);
  for (std::size_t i = 0; i < state.population; ++i) {
    samples[i].a.resize(d);
    for (std::size_t c = 0; c < d; ++c)
      samples[i].a[c] = state.mu[c] + state.sigma[c] * rng.normal();
    returns[i] = evaluate(samples[i]);
  }
  return cem_refit(state, samples, returns);
}

}  // namespace retflow

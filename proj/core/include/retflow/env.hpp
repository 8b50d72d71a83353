#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "retflow/policy.hpp"
#include "retflow/rng.hpp"
#include "retflow/tensor.hpp"

namespace retflow {

// Ordered behavior set with per-behavior response curve y_b ~
// Bernoulli(sigmoid(kappa_b * <u_eff, v_mean> + c_b)) and reward weights.
struct BehaviorSet {
  std::vector<std::string> names{"click", "long_view", "like"};
  std::vector<double> omega{1.0, 0.5, 0.5};
  std::vector<double> kappa{2.5, 2.5, 2.5};
  std::vector<double> c{-1.0, -1.2, -2.0};

  std::size_t size() const { return names.size(); }
};

struct EnvConfig {
  std::size_t num_users = 200;
  std::size_t num_items = 500;
  std::size_t d_action = 8;  // item / latent dimension
  std::size_t d_feat = 8;
  std::size_t slate_size = 6;
  std::size_t T_max = 10;
  std::size_t D_max = 10;
  double theta0 = -1.5;  // leave module bias
  double theta1 = 0.25;  // per-step fatigue
  double theta2 = 0.3;   // satisfaction retention
  double kappa_ret = 1.5;
  double kappa_div = 0.1;
  double drift = 0.02;
  double boredom = 0.3;
  double activity_lo = 0.05;
  double activity_hi = 0.25;
  BehaviorSet behaviors;
};

struct UserState {
  std::vector<double> latent;  // unit norm, drifts toward consumed content
  double activity = 0.0;
  UserFeatures features;  // frozen at world creation
  std::shared_ptr<std::vector<HistEntry>> log;  // persistent consumed log
  // Bookkeeping for the session in progress.
  std::size_t session_steps = 0;
  double session_satisfaction = 0.0;
  std::vector<std::size_t> session_items;  // all ids recommended this session
};

struct World {
  EnvConfig cfg;
  std::vector<UserState> users;
  Tensor2D items;  // num_items x d_action; row i holds item id i+1
};

struct StepOutcome {
  std::vector<double> feedback;  // y_b per behavior, 0/1
  double r_t = 0.0;
  bool left_session = false;
  Observation next_request;  // post-step observation (terminal state when left)
};

struct SessionSummary {
  double total_satisfaction = 0.0;
  double diversity = 0.0;  // in [0,1]
  std::size_t length = 0;
};

struct ReturnOutcome {
  std::size_t day = 1;     // in [1, D_max]
  double retention = 1.0;  // 1/day
};

// Latents, items, and the frozen feature projection are drawn from the
// world stream of `seed`; unit-norm rows throughout.
World world_init(const EnvConfig& cfg, std::uint64_t seed);

// Starts a fresh session: clears the session bookkeeping and returns the
// user's observation (static features plus the persistent log so far).
Observation reset_session(World& world, std::size_t user_id);

// Slate-level response. Per step, in order: one Bernoulli draw per behavior,
// then one leave draw. Appends (mean slate embedding, feedback) to the log,
// drifts the latent, and flags whether the session ended.
StepOutcome env_step(World& world, std::size_t user_id,
                     const std::vector<std::size_t>& slate, RngStream& rng);

// sigmoid(theta0 + theta1 * t - theta2 * satisfaction), forced to 1 at T_max.
double leave_probability(const EnvConfig& cfg, std::size_t t,
                         double satisfaction);

// Response probabilities for a slate, without consuming randomness.
std::vector<double> behavior_probabilities(const World& world,
                                           std::size_t user_id,
                                           const std::vector<std::size_t>& slate);

double immediate_reward(const std::vector<double>& y,
                        const std::vector<double>& omega);

// 1 - mean pairwise cosine over the recommended items, clamped to [0,1].
double session_diversity(const World& world,
                         const std::vector<std::size_t>& item_ids);

// Valid right after the session ended, before the next reset.
SessionSummary session_summary(const World& world, std::size_t user_id);

// Day logits: logit(j) = -j * (kappa_ret * satisfaction_rate +
// kappa_div * diversity + activity), j = 1..D_max.
std::vector<double> return_day_logits(const EnvConfig& cfg,
                                      const SessionSummary& summary,
                                      double activity);

ReturnOutcome sample_return_day(const EnvConfig& cfg,
                                const SessionSummary& summary, double activity,
                                RngStream& rng);

}  // namespace retflow

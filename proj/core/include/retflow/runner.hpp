#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "retflow/calibration.hpp"
#include "retflow/config.hpp"
#include "retflow/env.hpp"
#include "retflow/metrics.hpp"
#include "retflow/policy.hpp"

namespace retflow {

enum class PolicyKind { gfn, random, cem };

PolicyKind parse_policy(const std::string& name);

// How actions are produced during a rollout. gfn needs dims/params; cem
// replays fixed_action every step; random ignores all members.
struct ActingPolicy {
  PolicyKind kind = PolicyKind::random;
  const GfnDims* dims = nullptr;
  const ParamSet* params = nullptr;
  double sigma_min = 0.05;
  std::vector<double> fixed_action;
};

struct EpisodeOptions {
  bool collect = false;  // build the transition trajectory (needs gfn params)
  bool ncd = false;
};

struct EpisodeResult {
  SessionTrajectory trajectory;  // filled when collect is set
  EpisodeRecord record;          // episode/seed/policy_tag left for the caller
};

// One full session plus the return-day draw. A session of T steps yields
// T-1 regular transitions and one terminal transition that carries the
// final request state, the session reward prefix, and the retention.
EpisodeResult run_episode(World& world, std::size_t user_id,
                          const ActingPolicy& policy, RngStream& rng,
                          const EpisodeOptions& opt);

// Random but well-formed transitions whose stored embeddings come from a
// fresh encode under `params`; used by gradient and identity checks.
std::vector<Transition> synthetic_transitions(const GfnDims& dims,
                                              const ParamSet& params,
                                              std::size_t count,
                                              RngStream& rng);

struct TrainResult {
  int exit_code = 0;
  bool aborted = false;  // non-finite loss; checkpoint holds last good state
  std::uint64_t episodes = 0;
  std::vector<double> losses;  // one entry per completed training step
  std::optional<Metrics> final_metrics;
  std::string out_dir;
};

// Interleaves one collected session with one training step once the buffer
// reaches its minimum fill; writes config.resolved, run_log.jsonl,
// metrics.csv, and checkpoint.txt under run.out. run.policy=random rolls
// out without learning; run.policy=cem optimizes a constant action.
TrainResult run_train(const RunConfig& cfg);

struct EvalResult {
  int exit_code = 0;
  Metrics metrics;
  std::uint64_t episodes = 0;
};

// Frozen-policy rollouts on a fresh world: eval_log.jsonl plus a single
// metrics row in eval_metrics.csv. The checkpoint is required for gfn and
// cem policies and ignored for random.
EvalResult run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                    std::size_t episodes);

struct GradcheckResult {
  int exit_code = 0;  // 2 when any network fails the tolerance
  double max_rel_error = 0.0;
  std::string worst_param;
  std::map<std::string, double> per_network;  // enc, fw, bw, flow
};

// Central-difference check of the batch loss on a small synthetic model.
GradcheckResult run_gradcheck(std::uint64_t seed, double eps, double tol);

struct SanityResult {
  int exit_code = 0;  // 2 when tv exceeds the threshold
  double tv = 0.0;
  double threshold = 0.0;
};

// Trains the discrete model on a complete tree with log-uniform [0.1, 10]
// rewards drawn from the seed, then scores the terminal distribution.
SanityResult run_sanity(std::size_t depth, std::size_t branching,
                        std::size_t steps, double lr, double threshold,
                        std::uint64_t seed);

// Fits behavior weights from an interaction log; writes config-syntax
// overrides to out_path when non-empty.
CalibrationResult run_calibrate(const std::string& logs_path,
                                const std::string& out_path);

}  // namespace retflow

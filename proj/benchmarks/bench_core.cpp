#include <benchmark/benchmark.h>

#include <vector>

#include "retflow/config.hpp"
#include "retflow/encoder.hpp"
#include "retflow/env.hpp"
#include "retflow/policy.hpp"
#include "retflow/replay.hpp"
#include "retflow/rng.hpp"
#include "retflow/runner.hpp"
#include "retflow/tabular.hpp"

namespace {

using namespace retflow;

// Default-config model with initialized parameters and synthetic data.
struct Bench {
  GfnDims dims;
  ParamSet params;
  Hyper h;
  std::vector<Transition> transitions;
  std::vector<const Transition*> batch;

  Bench() {
    const RunConfig cfg = default_config();
    dims = gfn_dims_from(cfg);
    h = hyper_from(cfg);
    register_gfn(params, dims);
    RngStream init_rng = make_stream(0, kInitStream);
    init_gfn(params, dims, init_rng);
    RngStream data_rng = make_stream(0, kSampleStream);
    transitions = synthetic_transitions(dims, params, h.batch_size, data_rng);
    for (const Transition& t : transitions) batch.push_back(&t);
  }
};

Bench& bench() {
  static Bench b;
  return b;
}

void BM_encode_state(benchmark::State& state) {
  Bench& b = bench();
  const Transition& t = b.transitions.front();
  for (auto _ : state) {
    EncoderCache cache;
    StateEmbedding s = encode_state(b.dims.enc, b.params, t.obs.features,
                                    t.obs.view(), t.obs.ncd, cache);
    benchmark::DoNotOptimize(s.s.data());
  }
}
BENCHMARK(BM_encode_state);

void BM_db_loss_batch_forward(benchmark::State& state) {
  Bench& b = bench();
  for (auto _ : state) {
    double loss = db_loss_batch(b.dims, b.params, b.batch, b.h, false);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_db_loss_batch_forward);

void BM_train_step(benchmark::State& state) {
  Bench& b = bench();
  ParamSet params;
  register_gfn(params, b.dims);
  RngStream init_rng = make_stream(0, kInitStream);
  init_gfn(params, b.dims, init_rng);
  GfnOpt opt = make_gfn_opt(params);
  for (auto _ : state) {
    double loss = train_step(b.dims, params, opt, b.batch, b.h);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

void BM_env_step(benchmark::State& state) {
  const RunConfig cfg = default_config();
  World world = world_init(env_config_from(cfg), 0);
  RngStream rng = make_stream(0, kRolloutStream);
  reset_session(world, 0);
  const std::vector<std::size_t> slate = {1, 2, 3, 4, 5, 6};
  for (auto _ : state) {
    StepOutcome out = env_step(world, 0, slate, rng);
    benchmark::DoNotOptimize(out.r_t);
    if (out.left_session) reset_session(world, 0);
  }
}
BENCHMARK(BM_env_step);

void BM_run_episode(benchmark::State& state) {
  Bench& b = bench();
  const RunConfig cfg = default_config();
  World world = world_init(env_config_from(cfg), 0);
  RngStream rng = make_stream(0, kRolloutStream);
  const ActingPolicy pol{PolicyKind::gfn, &b.dims, &b.params, b.h.sigma_min,
                         {}};
  std::size_t user = 0;
  for (auto _ : state) {
    EpisodeResult er = run_episode(world, user, pol, rng, {true, false});
    benchmark::DoNotOptimize(er.record.steps);
    user = (user + 1) % world.cfg.num_users;
  }
}
BENCHMARK(BM_run_episode)->Unit(benchmark::kMicrosecond);

void BM_tabular_train_1k(benchmark::State& state) {
  RngStream reward_rng = make_stream(7, kWorldStream);
  std::vector<double> rewards(27);
  for (double& r : rewards) r = reward_rng.uniform(0.1, 10.0);
  const TreeEnv env = build_tree_env(3, 3, rewards);
  for (auto _ : state) {
    RngStream rng = make_stream(7, kSampleStream);
    TabularGFN model = train_tabular_db(env, 1000, 0.05, rng);
    benchmark::DoNotOptimize(model.log_flow.data());
  }
}
BENCHMARK(BM_tabular_train_1k)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

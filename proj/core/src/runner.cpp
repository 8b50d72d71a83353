#include "retflow/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "retflow/baselines.hpp"
#include "retflow/checkpoint.hpp"
#include "retflow/encoder.hpp"
#include "retflow/replay.hpp"
#include "retflow/tabular.hpp"

namespace retflow {

namespace fs = std::filesystem;

PolicyKind parse_policy(const std::string& name) {
  if (name == "gfn") return PolicyKind::gfn;
  if (name == "random") return PolicyKind::random;
  if (name == "cem") return PolicyKind::cem;
  throw std::runtime_error("unknown run.policy: " + name);
}

EpisodeResult run_episode(World& world, std::size_t user_id,
                          const ActingPolicy& policy, RngStream& rng,
                          const EpisodeOptions& opt) {
  const bool need_embed = policy.kind == PolicyKind::gfn || opt.collect;
  if (need_embed && (policy.dims == nullptr || policy.params == nullptr)) {
    throw std::invalid_argument("rollout needs model dims and params");
  }
  if (policy.kind == PolicyKind::cem &&
      policy.fixed_action.size() != world.cfg.d_action) {
    throw std::invalid_argument("fixed action has wrong dimension");
  }

  Observation obs = reset_session(world, user_id);
  obs.ncd = opt.ncd;

  std::vector<Observation> observations;
  std::vector<StateEmbedding> states;
  std::vector<ActionVector> actions;
  std::vector<double> rewards;
  std::uint64_t counts[3] = {0, 0, 0};

  bool left = false;
  Observation final_obs;
  while (!left) {
    StateEmbedding s;
    if (need_embed) {
      EncoderCache cache;
      s = encode_state(policy.dims->enc, *policy.params, obs.features,
                       obs.view(), obs.ncd, cache);
    }
    ActionVector a;
    switch (policy.kind) {
      case PolicyKind::gfn: {
        const GaussianParams g =
            forward_policy(*policy.dims, *policy.params, s, policy.sigma_min);
        a = sample_action(g, rng);
        break;
      }
      case PolicyKind::random:
        a = random_act(world.cfg.d_action, rng);
        break;
      case PolicyKind::cem:
        a.a = policy.fixed_action;
        break;
    }
    const std::vector<std::size_t> slate =
        action_to_slate(a, world.items, world.cfg.slate_size);
    StepOutcome out = env_step(world, user_id, slate, rng);

    for (std::size_t b = 0; b < 3 && b < out.feedback.size(); ++b) {
      counts[b] += out.feedback[b] > 0.5 ? 1 : 0;
    }
    rewards.push_back(out.r_t);
    if (opt.collect) {
      observations.push_back(std::move(obs));
      states.push_back(std::move(s));
      actions.push_back(std::move(a));
    }
    left = out.left_session;
    obs = std::move(out.next_request);
    obs.ncd = opt.ncd;
  }
  final_obs = std::move(obs);

  const SessionSummary summary = session_summary(world, user_id);
  const double activity = world.users[user_id].activity;
  const ReturnOutcome ret =
      sample_return_day(world.cfg, summary, activity, rng);

  EpisodeResult result;
  const std::size_t T = rewards.size();
  result.record.d = ret.day;
  result.record.retention = ret.retention;
  result.record.clicks = counts[0];
  result.record.long_views = counts[1];
  result.record.likes = counts[2];
  result.record.steps = T;
  double reward_sum = 0.0;
  for (double r : rewards) reward_sum += r;
  result.record.mean_r = reward_sum / static_cast<double>(T);

  if (opt.collect) {
    double prefix = 0.0;
    for (std::size_t t = 0; t + 1 < T; ++t) {
      Transition tr;
      tr.obs = observations[t];
      tr.next_obs = observations[t + 1];
      tr.s_t = states[t];
      tr.s_next = states[t + 1];
      tr.a_t = actions[t];
      tr.r_t = rewards[t];
      tr.reward_prefix = prefix;
      prefix += rewards[t];
      result.trajectory.steps.push_back(std::move(tr));
    }
    Transition last;
    last.obs = std::move(observations[T - 1]);
    last.next_obs = std::move(final_obs);
    last.s_t = std::move(states[T - 1]);
    last.a_t = std::move(actions[T - 1]);
    last.r_t = rewards[T - 1];
    last.reward_prefix = prefix;  // rewards of the T-1 steps before the exit
    last.is_terminal = true;
    last.retention = ret.retention;
    result.trajectory.steps.push_back(std::move(last));
  }
  return result;
}

std::vector<Transition> synthetic_transitions(const GfnDims& dims,
                                              const ParamSet& params,
                                              std::size_t count,
                                              RngStream& rng) {
  const std::size_t item_dim = dims.enc.item_dim;
  const std::size_t n_beh = dims.enc.num_behaviors;

  const auto random_obs = [&]() {
    Observation obs;
    obs.features.v.resize(dims.enc.d_feat);
    for (double& v : obs.features.v) v = 0.5 * rng.normal();
    const std::size_t len = rng.uniform_index(dims.enc.hist_len + 2);
    auto log = std::make_shared<std::vector<HistEntry>>();
    for (std::size_t i = 0; i < len; ++i) {
      HistEntry e;
      e.item_embedding.resize(item_dim);
      for (double& v : e.item_embedding) v = 0.5 * rng.normal();
      e.feedback.resize(n_beh);
      for (double& v : e.feedback) v = rng.uniform01() < 0.5 ? 0.0 : 1.0;
      log->push_back(std::move(e));
    }
    obs.log = log;
    obs.hist_end = len;
    return obs;
  };

  std::vector<Transition> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Transition tr;
    tr.obs = random_obs();
    tr.next_obs = random_obs();
    EncoderCache c1, c2;
    tr.s_t = encode_state(dims.enc, params, tr.obs.features, tr.obs.view(),
                          tr.obs.ncd, c1);
    tr.s_next = encode_state(dims.enc, params, tr.next_obs.features,
                             tr.next_obs.view(), tr.next_obs.ncd, c2);
    tr.a_t.a.resize(dims.d_action);
    for (double& v : tr.a_t.a) v = 0.6 * rng.normal();
    tr.r_t = rng.uniform(0.0, 0.5);
    tr.reward_prefix = rng.uniform(0.0, 1.0);
    if (i % 4 == 3) {
      tr.is_terminal = true;
      tr.retention = 1.0 / static_cast<double>(1 + rng.uniform_index(10));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

namespace {

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << text;
  f.flush();
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void snapshot_values(const ParamSet& params, std::vector<double>& snap) {
  snap.clear();
  for (const auto& [name, entry] : params) {
    (void)name;
    snap.insert(snap.end(), entry.value.data.begin(), entry.value.data.end());
  }
}

void restore_values(ParamSet& params, const std::vector<double>& snap) {
  std::size_t off = 0;
  for (auto& [name, entry] : params) {
    (void)name;
    std::copy(snap.begin() + off, snap.begin() + off + entry.value.size(),
              entry.value.data.begin());
    off += entry.value.size();
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Shared per-run logging: JSONL stream, metric window, and CSV rows.
struct RunLogger {
  std::ofstream jsonl;
  std::ofstream csv;
  MetricWindow window;
  std::uint64_t episodes = 0;
  std::uint64_t seed = 0;
  std::string tag;
  std::vector<double> interval_losses;
  std::uint64_t last_row_at = static_cast<std::uint64_t>(-1);

  RunLogger(const fs::path& jsonl_path, const fs::path& csv_path,
            std::size_t window_size, std::size_t slate_size,
            std::uint64_t seed_, std::string tag_)
      : jsonl(jsonl_path, std::ios::trunc),
        csv(csv_path, std::ios::trunc),
        window(window_size, slate_size),
        seed(seed_),
        tag(std::move(tag_)) {
    if (!jsonl) {
      throw std::runtime_error("cannot open run log: " + jsonl_path.string());
    }
    if (!csv) {
      throw std::runtime_error("cannot open metrics csv: " +
                               csv_path.string());
    }
    csv << metrics_csv_header() << '\n';
    csv.flush();
  }

  void log_episode(EpisodeRecord rec) {
    rec.episode = episodes;
    rec.seed = seed;
    rec.policy_tag = tag;
    jsonl << format_run_record(rec) << '\n';
    jsonl.flush();
    if (!jsonl) throw std::runtime_error("write failed on run log");
    window.add(rec);
    ++episodes;
  }

  void write_metrics_row() {
    const std::optional<Metrics> m = compute_metrics(window);
    csv << format_metrics_row(episodes, m.value_or(Metrics{}),
                              mean_of(interval_losses))
        << '\n';
    csv.flush();
    if (!csv) throw std::runtime_error("write failed on metrics csv");
    interval_losses.clear();
    last_row_at = episodes;
  }
};

}  // namespace

TrainResult run_train(const RunConfig& cfg) {
  TrainResult result;
  const fs::path out_dir(cfg.get_text("run.out"));
  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.resolved", cfg.resolved());
  result.out_dir = out_dir.string();

  const std::uint64_t seed =
      static_cast<std::uint64_t>(cfg.get_int("run.seed"));
  const EnvConfig env_cfg = env_config_from(cfg);
  World world = world_init(env_cfg, seed);
  const PolicyKind kind = parse_policy(cfg.get_text("run.policy"));
  const bool ncd = cfg.get_bool("ablation.ncd");
  const std::size_t eval_interval =
      static_cast<std::size_t>(cfg.get_int("run.eval_interval"));
  const std::size_t eval_window =
      static_cast<std::size_t>(cfg.get_int("run.eval_window"));
  const std::size_t target_steps =
      static_cast<std::size_t>(cfg.get_int("train.steps"));
  if (eval_interval == 0) {
    throw std::runtime_error("run.eval_interval must be positive");
  }

  RngStream rollout = make_stream(seed, kRolloutStream);
  RngStream sampler = make_stream(seed, kSampleStream);
  RunLogger logger(out_dir / "run_log.jsonl", out_dir / "metrics.csv",
                   eval_window, env_cfg.slate_size, seed,
                   cfg.get_text("run.policy"));

  const auto draw_user = [&]() -> std::size_t {
    return rollout.uniform_index(env_cfg.num_users);
  };

  if (kind == PolicyKind::gfn) {
    const GfnDims dims = gfn_dims_from(cfg);
    const Hyper h = hyper_from(cfg);
    ParamSet params;
    register_gfn(params, dims);
    RngStream init_rng = make_stream(seed, kInitStream);
    init_gfn(params, dims, init_rng);
    GfnOpt opt = make_gfn_opt(params);
    ReplayBuffer buffer(
        static_cast<std::size_t>(cfg.get_int("train.buffer")));
    const std::size_t min_fill =
        static_cast<std::size_t>(cfg.get_int("train.min_fill"));

    const ActingPolicy pol{PolicyKind::gfn, &dims, &params, h.sigma_min, {}};
    std::vector<double> snap;

    if (target_steps == 0) {
      // Rollouts only: one evaluation window worth of episodes, no updates.
      for (std::size_t e = 0; e < eval_interval; ++e) {
        logger.log_episode(
            run_episode(world, draw_user(), pol, rollout, {false, ncd})
                .record);
      }
      logger.write_metrics_row();
    } else {
      std::size_t steps_done = 0;
      while (steps_done < target_steps) {
        EpisodeResult er =
            run_episode(world, draw_user(), pol, rollout, {true, ncd});
        buffer.push(er.trajectory);
        logger.log_episode(er.record);

        if (buffer.ready(h.batch_size, min_fill)) {
          const std::vector<const Transition*> batch =
              buffer.sample(h.batch_size, sampler);
          if (!batch.empty()) {
            snapshot_values(params, snap);
            try {
              const double loss = train_step(dims, params, opt, batch, h);
              if (!std::isfinite(loss)) {
                throw std::runtime_error("train_step: non-finite loss");
              }
              result.losses.push_back(loss);
              logger.interval_losses.push_back(loss);
              ++steps_done;
            } catch (const std::runtime_error&) {
              restore_values(params, snap);
              save_checkpoint(out_dir / "checkpoint.txt", params);
              result.aborted = true;
              result.exit_code = 1;
              break;
            }
          }
        }
        if (logger.episodes % eval_interval == 0) logger.write_metrics_row();
      }
      if (logger.last_row_at != logger.episodes) logger.write_metrics_row();
    }
    if (!result.aborted) {
      save_checkpoint(out_dir / "checkpoint.txt", params);
    }
  } else if (kind == PolicyKind::cem) {
    const std::size_t d_action =
        static_cast<std::size_t>(cfg.get_int("model.action_dim"));
    CemState state = make_cem_state(d_action);
    state.population =
        static_cast<std::size_t>(cfg.get_int("cem.population"));
    state.elite_fraction = cfg.get_real("cem.elite_fraction");
    state.sigma_min = cfg.get_real("cem.sigma_min");
    const std::size_t iterations =
        static_cast<std::size_t>(cfg.get_int("cem.iterations"));
    const std::size_t eval_episodes =
        static_cast<std::size_t>(cfg.get_int("cem.eval_episodes"));
    if (eval_episodes == 0) {
      throw std::runtime_error("cem.eval_episodes must be positive");
    }

    const auto evaluate = [&](const ActionVector& a) -> double {
      ActingPolicy pol;
      pol.kind = PolicyKind::cem;
      pol.fixed_action = a.a;
      double sum = 0.0;
      for (std::size_t e = 0; e < eval_episodes; ++e) {
        EpisodeResult er =
            run_episode(world, draw_user(), pol, rollout, {false, ncd});
        sum += er.record.retention;
        logger.log_episode(std::move(er.record));
      }
      return sum / static_cast<double>(eval_episodes);
    };

    for (std::size_t it = 0; it < iterations; ++it) {
      state = cem_iteration(state, evaluate, sampler);
      logger.write_metrics_row();
    }

    ParamSet cp;
    Tensor2D& mu = cp.add("cem.mu", 1, d_action, ParamKind::bias);
    Tensor2D& sg = cp.add("cem.sigma", 1, d_action, ParamKind::bias);
    for (std::size_t i = 0; i < d_action; ++i) {
      mu.at(0, i) = state.mu[i];
      sg.at(0, i) = state.sigma[i];
    }
    save_checkpoint(out_dir / "checkpoint.txt", cp);
  } else {
    // Random policy: rollouts only, nothing to learn or save.
    const std::size_t episodes =
        target_steps == 0 ? eval_interval : target_steps;
    const ActingPolicy pol{PolicyKind::random, nullptr, nullptr, 0.0, {}};
    for (std::size_t e = 0; e < episodes; ++e) {
      logger.log_episode(
          run_episode(world, draw_user(), pol, rollout, {false, ncd}).record);
      if (logger.episodes % eval_interval == 0) logger.write_metrics_row();
    }
    if (logger.last_row_at != logger.episodes) logger.write_metrics_row();
  }

  result.episodes = logger.episodes;
  result.final_metrics = compute_metrics(logger.window);
  return result;
}

EvalResult run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                    std::size_t episodes) {
  if (episodes == 0) {
    throw std::invalid_argument("eval needs at least one episode");
  }
  const fs::path out_dir(cfg.get_text("run.out"));
  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.resolved", cfg.resolved());

  const std::uint64_t seed =
      static_cast<std::uint64_t>(cfg.get_int("run.seed"));
  const EnvConfig env_cfg = env_config_from(cfg);
  World world = world_init(env_cfg, seed);
  const PolicyKind kind = parse_policy(cfg.get_text("run.policy"));
  const bool ncd = cfg.get_bool("ablation.ncd");

  GfnDims dims;
  ParamSet params;
  ActingPolicy pol;
  pol.kind = kind;
  if (kind == PolicyKind::gfn) {
    if (checkpoint_path.empty()) {
      throw std::runtime_error("gfn eval requires a checkpoint");
    }
    dims = gfn_dims_from(cfg);
    register_gfn(params, dims);
    load_checkpoint(checkpoint_path, params);
    pol.dims = &dims;
    pol.params = &params;
    pol.sigma_min = cfg.get_real("model.sigma_min");
  } else if (kind == PolicyKind::cem) {
    if (checkpoint_path.empty()) {
      throw std::runtime_error("cem eval requires a checkpoint");
    }
    const std::size_t d_action =
        static_cast<std::size_t>(cfg.get_int("model.action_dim"));
    ParamSet cp;
    cp.add("cem.mu", 1, d_action, ParamKind::bias);
    cp.add("cem.sigma", 1, d_action, ParamKind::bias);
    load_checkpoint(checkpoint_path, cp);
    const Tensor2D& mu = cp.value("cem.mu");
    pol.fixed_action.assign(mu.data.begin(), mu.data.end());
  }

  RngStream rollout = make_stream(seed, kRolloutStream);
  RunLogger logger(out_dir / "eval_log.jsonl", out_dir / "eval_metrics.csv",
                   episodes, env_cfg.slate_size, seed,
                   cfg.get_text("run.policy"));
  for (std::size_t e = 0; e < episodes; ++e) {
    const std::size_t user = rollout.uniform_index(env_cfg.num_users);
    logger.log_episode(
        run_episode(world, user, pol, rollout, {false, ncd}).record);
  }
  logger.write_metrics_row();

  EvalResult result;
  result.metrics = compute_metrics(logger.window).value();
  result.episodes = logger.episodes;
  return result;
}

GradcheckResult run_gradcheck(std::uint64_t seed, double eps, double tol) {
  GfnDims dims;
  dims.enc.d_model = 8;
  dims.enc.num_heads = 2;
  dims.enc.hidden = 12;
  dims.enc.d_feat = 5;
  dims.enc.num_behaviors = 3;
  dims.enc.item_dim = 4;
  dims.enc.hist_len = 6;
  dims.enc.stats_window = 3;
  dims.d_action = 4;
  dims.hidden = 12;

  Hyper h;
  h.alpha = 0.8;
  h.beta_F = 1.0;
  h.beta_B = 1.0;
  h.beta_r = 0.5;
  h.sigma_min = 0.05;

  ParamSet params;
  register_gfn(params, dims);
  RngStream init_rng = make_stream(seed, kInitStream);
  init_gfn(params, dims, init_rng);

  RngStream data_rng = make_stream(seed, kSampleStream);
  const std::vector<Transition> transitions =
      synthetic_transitions(dims, params, 8, data_rng);
  std::vector<const Transition*> batch;
  for (const Transition& t : transitions) batch.push_back(&t);

  const auto f = [&](ParamSet& p) -> double {
    return db_loss_batch(dims, p, batch, h, true);
  };
  RngStream check_rng = make_stream(seed, kSampleStream + 7);
  const GradCheckResult check =
      gradient_check(f, params, eps, tol, check_rng, 48);

  GradcheckResult result;
  result.max_rel_error = check.max_rel_error;
  result.worst_param = check.worst_param;
  result.exit_code = check.pass ? 0 : 2;
  for (const auto& [name, err] : check.per_tensor_max) {
    std::string net = "enc";
    if (name.rfind("fw.", 0) == 0) {
      net = "fw";
    } else if (name.rfind("bw.", 0) == 0) {
      net = "bw";
    } else if (name.rfind("flow.", 0) == 0) {
      net = "flow";
    }
    auto [it, inserted] = result.per_network.emplace(net, err);
    if (!inserted && err > it->second) it->second = err;
  }
  return result;
}

SanityResult run_sanity(std::size_t depth, std::size_t branching,
                        std::size_t steps, double lr, double threshold,
                        std::uint64_t seed) {
  std::size_t leaves = 1;
  for (std::size_t i = 0; i < depth; ++i) leaves *= branching;

  RngStream reward_rng = make_stream(seed, kWorldStream);
  std::vector<double> rewards(leaves);
  const double lo = std::log(0.1);
  const double hi = std::log(10.0);
  for (double& r : rewards) r = std::exp(reward_rng.uniform(lo, hi));

  const TreeEnv env = build_tree_env(depth, branching, rewards);
  RngStream train_rng = make_stream(seed, kSampleStream);
  const TabularGFN model = train_tabular_db(env, steps, lr, train_rng);

  SanityResult result;
  result.tv = terminal_tv(env, model);
  result.threshold = threshold;
  result.exit_code = result.tv <= threshold ? 0 : 2;
  return result;
}

CalibrationResult run_calibrate(const std::string& logs_path,
                                const std::string& out_path) {
  const CalibrationResult fit = fit_rates(load_interactions(logs_path));
  if (!out_path.empty()) {
    write_text_file(out_path, format_calibration(fit));
  }
  return fit;
}

}  // namespace retflow

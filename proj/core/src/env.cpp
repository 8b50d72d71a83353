#include "retflow/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "retflow/nn.hpp"

namespace retflow {
namespace {

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
}

const UserState& user_at(const World& world, std::size_t user_id) {
  if (user_id >= world.users.size())
    throw std::invalid_argument("env: unknown user");
  return world.users[user_id];
}

void check_slate(const World& world, const std::vector<std::size_t>& slate) {
  if (slate.size() != world.cfg.slate_size)
    throw std::invalid_argument("env: slate size mismatch");
  for (std::size_t i = 0; i < slate.size(); ++i) {
    if (slate[i] < 1 || slate[i] > world.items.rows)
      throw std::invalid_argument("env: slate item id out of range");
    for (std::size_t j = i + 1; j < slate.size(); ++j)
      if (slate[i] == slate[j])
        throw std::invalid_argument("env: duplicate slate item id");
  }
}

std::vector<double> slate_mean(const World& world,
                               const std::vector<std::size_t>& slate) {
  std::vector<double> v(world.cfg.d_action, 0.0);
  for (std::size_t id : slate) {
    const double* row = world.items.row(id - 1);
    for (std::size_t c = 0; c < v.size(); ++c) v[c] += row[c];
  }
  for (double& x : v) x /= double(slate.size());
  return v;
}

// Latent minus the boredom pull toward recently consumed content.
std::vector<double> effective_latent(const World& world, const UserState& u) {
  std::vector<double> eff = u.latent;
  std::size_t n = u.log ? u.log->size() : 0;
  std::size_t win = std::min<std::size_t>(n, 5);
  if (win == 0) return eff;
  for (std::size_t j = n - win; j < n; ++j) {
    const std::vector<double>& e = (*u.log)[j].item_embedding;
    for (std::size_t c = 0; c < eff.size(); ++c)
      eff[c] -= world.cfg.boredom * e[c] / double(win);
  }
  return eff;
}

Observation observe(const UserState& u) {
  Observation o;
  o.features = u.features;
  o.log = u.log;
  o.hist_end = u.log ? u.log->size() : 0;
  return o;
}

}  // namespace

World world_init(const EnvConfig& cfg, std::uint64_t seed) {
  if (cfg.slate_size > cfg.num_items)
    throw std::invalid_argument("world_init: slate larger than catalog");
  if (cfg.behaviors.omega.size() != cfg.behaviors.size() ||
      cfg.behaviors.kappa.size() != cfg.behaviors.size() ||
      cfg.behaviors.c.size() != cfg.behaviors.size())
    throw std::invalid_argument("world_init: behavior table sizes differ");

  World w;
  w.cfg = cfg;
  RngStream rng = make_stream(seed, kWorldStream);

  // Frozen projection turning a latent into the observable feature vector.
  Tensor2D M(cfg.d_feat, cfg.d_action);
  for (double& x : M.data) x = rng.normal();

  w.users.resize(cfg.num_users);
  for (UserState& u : w.users) {
    u.latent.resize(cfg.d_action);
    for (double& x : u.latent) x = rng.normal();
    normalize(u.latent);
    u.activity = rng.uniform(cfg.activity_lo, cfg.activity_hi);
    u.features.v.assign(cfg.d_feat, 0.0);
    for (std::size_t r = 0; r < cfg.d_feat; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cfg.d_action; ++c)
        acc += M.at(r, c) * u.latent[c];
      u.features.v[r] = std::tanh(acc);
    }
    u.log = std::make_shared<std::vector<HistEntry>>();
  }

  w.items = Tensor2D(cfg.num_items, cfg.d_action);
  std::vector<double> row(cfg.d_action);
  for (std::size_t i = 0; i < cfg.num_items; ++i) {
    for (double& x : row) x = rng.normal();
    normalize(row);
    std::copy(row.begin(), row.end(), w.items.row(i));
  }
  return w;
}

Observation reset_session(World& world, std::size_t user_id) {
  user_at(world, user_id);
  UserState& u = world.users[user_id];
  u.session_steps = 0;
  u.session_satisfaction = 0.0;
  u.session_items.clear();
  return observe(u);
}

double leave_probability(const EnvConfig& cfg, std::size_t t,
                         double satisfaction) {
  if (t >= cfg.T_max) return 1.0;
  return sigmoid(cfg.theta0 + cfg.theta1 * double(t) -
                 cfg.theta2 * satisfaction);
}

std::vector<double> behavior_probabilities(
    const World& world, std::size_t user_id,
    const std::vector<std::size_t>& slate) {
  const UserState& u = user_at(world, user_id);
  check_slate(world, slate);
  std::vector<double> vbar = slate_mean(world, slate);
  std::vector<double> eff = effective_latent(world, u);
  double dot = 0.0;
  for (std::size_t c = 0; c < vbar.size(); ++c) dot += eff[c] * vbar[c];
  const BehaviorSet& b = world.cfg.behaviors;
  std::vector<double> p(b.size());
  for (std::size_t i = 0; i < b.size(); ++i)
    p[i] = sigmoid(b.kappa[i] * dot + b.c[i]);
  return p;
}

double immediate_reward(const std::vector<double>& y,
                        const std::vector<double>& omega) {
  if (y.size() != omega.size())
    throw std::invalid_argument("immediate_reward: behavior set mismatch");
  double r = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) r += omega[i] * y[i];
  return r;
}

StepOutcome env_step(World& world, std::size_t user_id,
                     const std::vector<std::size_t>& slate, RngStream& rng) {
  std::vector<double> p = behavior_probabilities(world, user_id, slate);
  UserState& u = world.users[user_id];
  std::vector<double> vbar = slate_mean(world, slate);

  StepOutcome out;
  out.feedback.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    out.feedback[i] = rng.uniform01() < p[i] ? 1.0 : 0.0;
  out.r_t = immediate_reward(out.feedback, world.cfg.behaviors.omega);

  u.log->push_back(HistEntry{vbar, out.feedback});
  for (std::size_t c = 0; c < u.latent.size(); ++c)
    u.latent[c] += world.cfg.drift * (vbar[c] - u.latent[c]);
  normalize(u.latent);

  u.session_steps += 1;
  u.session_satisfaction += out.r_t;
  u.session_items.insert(u.session_items.end(), slate.begin(), slate.end());

  double p_leave =
      leave_probability(world.cfg, u.session_steps, u.session_satisfaction);
  out.left_session = rng.uniform01() < p_leave;
  out.next_request = observe(u);
  return out;
}

double session_diversity(const World& world,
                         const std::vector<std::size_t>& item_ids) {
  std::size_t n = item_ids.size();
  if (n < 2) return 0.0;
  std::size_t d = world.cfg.d_action;
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = world.items.row(item_ids[i] - 1);
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += a[c] * a[c];
    norm[i] = std::max(std::sqrt(acc), 1e-12);
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = world.items.row(item_ids[i] - 1);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* b = world.items.row(item_ids[j] - 1);
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += a[c] * b[c];
      sum += dot / (norm[i] * norm[j]);
      ++pairs;
    }
  }
  double div = 1.0 - sum / double(pairs);
  return std::min(1.0, std::max(0.0, div));
}

SessionSummary session_summary(const World& world, std::size_t user_id) {
  const UserState& u = user_at(world, user_id);
  SessionSummary s;
  s.total_satisfaction = u.session_satisfaction;
  s.length = u.session_steps;
  s.diversity = session_diversity(world, u.session_items);
  return s;
}

std::vector<double> return_day_logits(const EnvConfig& cfg,
                                      const SessionSummary& summary,
                                      double activity) {
  double rate = summary.length > 0
                    ? summary.total_satisfaction / double(summary.length)
                    : 0.0;
  double coef = cfg.kappa_ret * rate + cfg.kappa_div * summary.diversity +
                activity;
  std::vector<double> logits(cfg.D_max);
  for (std::size_t j = 1; j <= cfg.D_max; ++j)
    logits[j - 1] = -double(j) * coef;
  return logits;
}

ReturnOutcome sample_return_day(const EnvConfig& cfg,
                                const SessionSummary& summary, double activity,
                                RngStream& rng) {
  std::vector<double> logits = return_day_logits(cfg, summary, activity);
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  double u = rng.uniform01() * z;
  double acc = 0.0;
  std::size_t day = cfg.D_max;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    acc += logits[j];
    if (u < acc) {
      day = j + 1;
      break;
    }
  }
  ReturnOutcome out;
  out.day = day;
  out.retention = 1.0 / double(day);
  return out;
}

}  // namespace retflow

#include "retflow/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "retflow/metrics.hpp"

namespace retflow {

namespace {

const char* type_name(ConfigType t) {
  switch (t) {
    case ConfigType::integer: return "integer";
    case ConfigType::real: return "real";
    case ConfigType::boolean: return "boolean";
    case ConfigType::text: return "text";
  }
  return "?";
}

ConfigValue make_int(std::int64_t v) {
  ConfigValue c;
  c.type = ConfigType::integer;
  c.i = v;
  return c;
}

ConfigValue make_real(double v) {
  ConfigValue c;
  c.type = ConfigType::real;
  c.d = v;
  return c;
}

ConfigValue make_bool(bool v) {
  ConfigValue c;
  c.type = ConfigType::boolean;
  c.b = v;
  return c;
}

ConfigValue make_text(const std::string& v) {
  ConfigValue c;
  c.type = ConfigType::text;
  c.s = v;
  return c;
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) {
    --e;
  }
  return s.substr(b, e - b);
}

[[noreturn]] void parse_fail(const std::string& origin, std::size_t line_no,
                             const std::string& what) {
  throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": " +
                           what);
}

}  // namespace

const ConfigValue& RunConfig::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::logic_error("unknown config key: " + key);
  }
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const ConfigValue& v = find(key);
  if (v.type != ConfigType::integer) {
    throw std::logic_error("config key is not an integer: " + key);
  }
  return v.i;
}

double RunConfig::get_real(const std::string& key) const {
  const ConfigValue& v = find(key);
  if (v.type != ConfigType::real) {
    throw std::logic_error("config key is not a real: " + key);
  }
  return v.d;
}

bool RunConfig::get_bool(const std::string& key) const {
  const ConfigValue& v = find(key);
  if (v.type != ConfigType::boolean) {
    throw std::logic_error("config key is not a boolean: " + key);
  }
  return v.b;
}

const std::string& RunConfig::get_text(const std::string& key) const {
  const ConfigValue& v = find(key);
  if (v.type != ConfigType::text) {
    throw std::logic_error("config key is not text: " + key);
  }
  return v.s;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [key, v] : values_) {
    out += key;
    out += " = ";
    switch (v.type) {
      case ConfigType::integer: out += std::to_string(v.i); break;
      case ConfigType::real: out += fmt_double(v.d); break;
      case ConfigType::boolean: out += v.b ? "true" : "false"; break;
      case ConfigType::text: out += v.s; break;
    }
    out += '\n';
  }
  return out;
}

RunConfig default_config() {
  RunConfig cfg;
  const auto I = [&](const char* k, std::int64_t v) { cfg.set(k, make_int(v)); };
  const auto R = [&](const char* k, double v) { cfg.set(k, make_real(v)); };
  const auto B = [&](const char* k, bool v) { cfg.set(k, make_bool(v)); };
  const auto T = [&](const char* k, const char* v) {
    cfg.set(k, make_text(v));
  };

  I("env.num_users", 200);
  I("env.num_items", 500);
  I("env.d_feat", 8);
  I("env.slate_size", 6);
  I("env.T_max", 10);
  I("env.D_max", 10);
  R("env.theta0", -1.5);
  R("env.theta1", 0.25);
  R("env.theta2", 0.3);
  R("env.kappa_ret", 1.5);
  R("env.kappa_div", 0.1);
  R("env.drift", 0.02);
  R("env.boredom", 0.3);
  R("env.activity_lo", 0.05);
  R("env.activity_hi", 0.25);
  R("env.kappa.click", 2.5);
  R("env.kappa.long_view", 2.5);
  R("env.kappa.like", 2.5);

  R("calib.omega.click", 1.0);
  R("calib.omega.long_view", 0.5);
  R("calib.omega.like", 0.5);
  R("calib.c.click", -1.0);
  R("calib.c.long_view", -1.2);
  R("calib.c.like", -2.0);

  I("model.embedding", 32);
  I("model.heads", 4);
  I("model.hidden", 128);
  I("model.action_dim", 8);
  I("model.hist_len", 50);
  I("model.stats_window", 10);
  R("model.sigma_min", 0.05);

  I("train.steps", 20000);
  I("train.batch_size", 128);
  R("train.lr_flow", 2e-5);
  R("train.lr_forward", 1e-4);
  R("train.lr_backward", 1e-4);
  R("train.alpha", 1.0);
  R("train.beta_F", 1.0);
  R("train.beta_B", 1.0);
  R("train.beta_r", 0.5);
  I("train.buffer", 100000);
  I("train.min_fill", 1000);

  T("run.policy", "gfn");
  I("run.seed", 0);
  T("run.out", "out");
  I("run.eval_window", 1000);
  I("run.eval_interval", 500);

  B("ablation.ncd", false);
  B("ablation.nif", false);
  B("ablation.sif", false);

  I("cem.population", 64);
  R("cem.elite_fraction", 0.25);
  R("cem.sigma_min", 0.02);
  I("cem.iterations", 25);
  I("cem.eval_episodes", 2);

  return cfg;
}

RunConfig parse_config_text(const std::string& text,
                            const std::string& origin) {
  RunConfig cfg = default_config();
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      parse_fail(origin, line_no, "expected `key = value`");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) parse_fail(origin, line_no, "empty key");
    if (!cfg.has(key)) parse_fail(origin, line_no, "unknown key " + key);
    if (!seen.insert(key).second) {
      parse_fail(origin, line_no, "duplicate key " + key);
    }
    if (value.empty()) parse_fail(origin, line_no, "empty value for " + key);

    ConfigValue v;
    v.type = cfg.values().at(key).type;
    switch (v.type) {
      case ConfigType::integer: {
        const auto res =
            std::from_chars(value.data(), value.data() + value.size(), v.i);
        if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
          parse_fail(origin, line_no,
                     key + " expects an integer, got `" + value + "`");
        }
        break;
      }
      case ConfigType::real: {
        const auto res =
            std::from_chars(value.data(), value.data() + value.size(), v.d);
        if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
          parse_fail(origin, line_no,
                     key + " expects a real, got `" + value + "`");
        }
        break;
      }
      case ConfigType::boolean: {
        if (value == "true") {
          v.b = true;
        } else if (value == "false") {
          v.b = false;
        } else {
          parse_fail(origin, line_no,
                     key + " expects true or false, got `" + value + "`");
        }
        break;
      }
      case ConfigType::text: {
        v.s = value;
        break;
      }
    }
    cfg.set(key, v);
  }
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  if (path.empty()) return default_config();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str(), path);
}

namespace {

std::size_t get_size(const RunConfig& cfg, const std::string& key) {
  const std::int64_t v = cfg.get_int(key);
  if (v <= 0) {
    throw std::runtime_error("config key must be positive: " + key);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

EnvConfig env_config_from(const RunConfig& cfg) {
  EnvConfig env;
  env.num_users = get_size(cfg, "env.num_users");
  env.num_items = get_size(cfg, "env.num_items");
  env.d_action = get_size(cfg, "model.action_dim");
  env.d_feat = get_size(cfg, "env.d_feat");
  env.slate_size = get_size(cfg, "env.slate_size");
  env.T_max = get_size(cfg, "env.T_max");
  env.D_max = get_size(cfg, "env.D_max");
  env.theta0 = cfg.get_real("env.theta0");
  env.theta1 = cfg.get_real("env.theta1");
  env.theta2 = cfg.get_real("env.theta2");
  env.kappa_ret = cfg.get_real("env.kappa_ret");
  env.kappa_div = cfg.get_real("env.kappa_div");
  env.drift = cfg.get_real("env.drift");
  env.boredom = cfg.get_real("env.boredom");
  env.activity_lo = cfg.get_real("env.activity_lo");
  env.activity_hi = cfg.get_real("env.activity_hi");
  for (std::size_t b = 0; b < env.behaviors.size(); ++b) {
    const std::string& name = env.behaviors.names[b];
    env.behaviors.kappa[b] = cfg.get_real("env.kappa." + name);
    env.behaviors.omega[b] = cfg.get_real("calib.omega." + name);
    env.behaviors.c[b] = cfg.get_real("calib.c." + name);
  }
  if (env.slate_size > env.num_items) {
    throw std::runtime_error("env.slate_size exceeds env.num_items");
  }
  return env;
}

EncoderDims encoder_dims_from(const RunConfig& cfg) {
  EncoderDims dims;
  dims.d_model = get_size(cfg, "model.embedding");
  dims.num_heads = get_size(cfg, "model.heads");
  dims.hidden = get_size(cfg, "model.hidden");
  dims.d_feat = get_size(cfg, "env.d_feat");
  dims.num_behaviors = 3;
  dims.item_dim = get_size(cfg, "model.action_dim");
  dims.hist_len = get_size(cfg, "model.hist_len");
  dims.stats_window = get_size(cfg, "model.stats_window");
  if (dims.d_model % dims.num_heads != 0) {
    throw std::runtime_error("model.embedding must be divisible by model.heads");
  }
  return dims;
}

GfnDims gfn_dims_from(const RunConfig& cfg) {
  GfnDims dims;
  dims.enc = encoder_dims_from(cfg);
  dims.d_action = get_size(cfg, "model.action_dim");
  dims.hidden = get_size(cfg, "model.hidden");
  return dims;
}

Hyper hyper_from(const RunConfig& cfg) {
  Hyper h;
  h.alpha = cfg.get_real("train.alpha");
  if (cfg.get_bool("ablation.nif")) h.alpha = 0.0;
  h.beta_F = cfg.get_real("train.beta_F");
  h.beta_B = cfg.get_real("train.beta_B");
  h.beta_r = cfg.get_real("train.beta_r");
  h.lr_flow = cfg.get_real("train.lr_flow");
  h.lr_forward = cfg.get_real("train.lr_forward");
  h.lr_backward = cfg.get_real("train.lr_backward");
  h.batch_size = get_size(cfg, "train.batch_size");
  h.sigma_min = cfg.get_real("model.sigma_min");
  h.d_action = get_size(cfg, "model.action_dim");
  h.slate_size = get_size(cfg, "env.slate_size");
  h.sif = cfg.get_bool("ablation.sif");
  if (h.alpha < 0.0) throw std::runtime_error("train.alpha must be >= 0");
  if (h.sigma_min <= 0.0) {
    throw std::runtime_error("model.sigma_min must be > 0");
  }
  return h;
}

}  // namespace retflow

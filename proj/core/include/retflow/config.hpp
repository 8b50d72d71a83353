#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "retflow/encoder.hpp"
#include "retflow/env.hpp"
#include "retflow/policy.hpp"

namespace retflow {

enum class ConfigType { integer, real, boolean, text };

struct ConfigValue {
  ConfigType type = ConfigType::integer;
  std::int64_t i = 0;
  double d = 0.0;
  bool b = false;
  std::string s;
};

// Flat dotted-key configuration. Every key exists with a default; files can
// only override known keys, so typos fail loudly.
class RunConfig {
 public:
  std::int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_text(const std::string& key) const;

  void set(const std::string& key, const ConfigValue& v) { values_[key] = v; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, ConfigValue>& values() const { return values_; }

  // All effective keys as `key = value` lines in name order; parsing the
  // result reproduces this config exactly.
  std::string resolved() const;

 private:
  const ConfigValue& find(const std::string& key) const;
  std::map<std::string, ConfigValue> values_;
};

RunConfig default_config();

// Empty path returns the defaults. Lines are `key = value`; `#` starts a
// comment. Unknown keys, duplicate keys, and type mismatches are errors that
// name the line.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text,
                            const std::string& origin);

// Derived typed views.
EnvConfig env_config_from(const RunConfig& cfg);
EncoderDims encoder_dims_from(const RunConfig& cfg);
GfnDims gfn_dims_from(const RunConfig& cfg);
Hyper hyper_from(const RunConfig& cfg);  // ablation.nif forces alpha = 0

}  // namespace retflow

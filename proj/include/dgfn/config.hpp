#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dgfn/hypergrid.hpp"
#include "dgfn/metrics.hpp"
#include "dgfn/policy.hpp"
#include "dgfn/tensor.hpp"
#include "dgfn/trainer.hpp"

namespace dgfn {

struct ConfigError : Error {
  using Error::Error;
};

// --- minimal TOML reader ----------------------------------------------------
// Covers the subset the config schema uses: [tables], key = value with
// integer, float, boolean, quoted-string, and single-line array values,
// and # comments.

struct TomlValue {
  enum class Kind { kInt, kFloat, kBool, kString, kArray };
  Kind kind = Kind::kInt;
  std::int64_t i = 0;
  double f = 0;
  bool b = false;
  std::string s;
  std::vector<TomlValue> arr;
};

using TomlTable = std::map<std::string, TomlValue>;
using TomlDoc = std::map<std::string, TomlTable>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline TomlValue parse_toml_scalar(std::string_view raw, int line_no) {
  TomlValue v;
  if (raw.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') {
      throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
    }
    v.kind = TomlValue::Kind::kString;
    v.s = std::string(raw.substr(1, raw.size() - 2));
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = TomlValue::Kind::kBool;
    v.b = raw == "true";
    return v;
  }
  const bool looks_float = raw.find_first_of(".eE") != std::string_view::npos &&
                           raw != "e" && raw.find_first_not_of("+-0123456789.eE") ==
                                             std::string_view::npos;
  if (!looks_float) {
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), out);
    if (ec == std::errc() && p == raw.data() + raw.size()) {
      v.kind = TomlValue::Kind::kInt;
      v.i = out;
      return v;
    }
  }
  double out = 0;
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), out);
  if (ec == std::errc() && p == raw.data() + raw.size()) {
    v.kind = TomlValue::Kind::kFloat;
    v.f = out;
    return v;
  }
  throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value '" +
                    std::string(raw) + "'");
}

inline TomlValue parse_toml_value(std::string_view raw, int line_no) {
  raw = trim(raw);
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') {
      throw ConfigError("config line " + std::to_string(line_no) + ": unterminated array");
    }
    TomlValue v;
    v.kind = TomlValue::Kind::kArray;
    std::string_view body = trim(raw.substr(1, raw.size() - 2));
    while (!body.empty()) {
      std::size_t comma = std::string_view::npos;
      bool quoted = false;
      for (std::size_t i = 0; i < body.size(); ++i) {
        if (body[i] == '"') quoted = !quoted;
        if (body[i] == ',' && !quoted) {
          comma = i;
          break;
        }
      }
      std::string_view item =
          comma == std::string_view::npos ? body : body.substr(0, comma);
      v.arr.push_back(parse_toml_scalar(trim(item), line_no));
      if (comma == std::string_view::npos) break;
      body = trim(body.substr(comma + 1));
    }
    return v;
  }
  return parse_toml_scalar(raw, line_no);
}

}  // namespace detail

inline TomlDoc parse_toml(std::string_view text) {
  TomlDoc doc;
  std::string table;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("config line " + std::to_string(line_no) + ": bad table header");
      }
      table = std::string(detail::trim(line.substr(1, line.size() - 2)));
      doc[table];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(detail::trim(line.substr(0, eq)));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    TomlTable& t = doc[table];
    if (t.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                        table + "." + key + "'");
    }
    t[key] = detail::parse_toml_value(line.substr(eq + 1), line_no);
  }
  return doc;
}

// --- experiment configuration ----------------------------------------------

struct ExperimentConfig {
  EnvConfig env;
  PolicyConfig policy;
  TrainerConfig trainer;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string out_dir = "runs/out";
  std::size_t window_capacity = 200000;
  bool oracle_l1 = false;  // report the exact sampler L1 too (small grids)

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    try {
      env.validate();
      trainer.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());  // surface as a configuration problem
    }
    if (policy.hidden.empty()) throw ConfigError("policy.hidden: need at least one layer");
    for (int w : policy.hidden) {
      if (w < 1) throw ConfigError("policy.hidden: widths must be >= 1");
    }
    if (!(policy.leaky_slope > 0 && policy.leaky_slope < 1)) {
      throw ConfigError("policy.leaky_slope: must be in (0,1)");
    }
    if (policy.flow_head != (trainer.objective == Objective::kSubTb)) {
      throw ConfigError("policy.flow_head: tied to trainer.objective");
    }
    if (seeds.empty()) throw ConfigError("experiment.seeds: need at least one seed");
    if (out_dir.empty()) throw ConfigError("experiment.out_dir: empty");
    if (window_capacity == 0) throw ConfigError("experiment.window_capacity: zero");
  }
};

/// Canonical serialization. Field order is fixed so equal configs produce
/// identical bytes; doubles use shortest round-trip formatting.
inline std::string serialize_config(const ExperimentConfig& c) {
  std::string o;
  auto kv_i = [&](const char* k, std::int64_t v) {
    o += k;
    o += " = ";
    o += std::to_string(v);
    o += '\n';
  };
  auto kv_f = [&](const char* k, double v) {
    o += k;
    o += " = ";
    std::string s = format_double(v);
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    o += s;
    o += '\n';
  };
  auto kv_b = [&](const char* k, bool v) {
    o += k;
    o += " = ";
    o += v ? "true" : "false";
    o += '\n';
  };
  auto kv_s = [&](const char* k, const std::string& v) {
    o += k;
    o += " = \"";
    o += v;
    o += "\"\n";
  };

  o += "[env]\n";
  kv_i("dims", c.env.dims);
  kv_i("side", c.env.side);
  kv_f("r0", c.env.r0);
  kv_f("r1", c.env.r1);
  kv_f("r2", c.env.r2);
  o += "\n[policy]\n";
  o += "hidden = [";
  for (std::size_t i = 0; i < c.policy.hidden.size(); ++i) {
    if (i) o += ", ";
    o += std::to_string(c.policy.hidden[i]);
  }
  o += "]\n";
  kv_f("leaky_slope", c.policy.leaky_slope);
  kv_b("learn_pb", c.policy.learn_pb);
  o += "\n[trainer]\n";
  kv_s("algorithm", to_string(c.trainer.algorithm));
  kv_s("objective", to_string(c.trainer.objective));
  kv_f("subtb_lambda", c.trainer.subtb_lambda);
  kv_i("t_initial", c.trainer.t_initial);
  kv_i("t_update", c.trainer.t_update);
  kv_f("alpha", c.trainer.alpha);
  kv_b("initial_phase_full_copy", c.trainer.initial_phase_full_copy);
  kv_i("batch_size", c.trainer.batch_size);
  kv_i("total_steps", c.trainer.total_steps);
  kv_f("lr_policy", c.trainer.lr_policy);
  kv_f("lr_logz", c.trainer.lr_logz);
  kv_f("exploration_eps", c.trainer.exploration_eps);
  kv_i("metric_every", c.trainer.metric_every);
  kv_i("checkpoint_every", c.trainer.checkpoint_every);
  o += "\n[experiment]\n";
  o += "seeds = [";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) {
    if (i) o += ", ";
    o += std::to_string(c.seeds[i]);
  }
  o += "]\n";
  kv_s("out_dir", c.out_dir);
  kv_i("window_capacity", static_cast<std::int64_t>(c.window_capacity));
  kv_b("oracle_l1", c.oracle_l1);
  return o;
}

namespace detail {

struct TomlReader {
  const TomlDoc& doc;
  std::map<std::string, std::map<std::string, bool>> seen;

  const TomlValue* find(const std::string& table, const std::string& key) {
    auto t = doc.find(table);
    if (t == doc.end()) return nullptr;
    auto v = t->second.find(key);
    if (v == t->second.end()) return nullptr;
    seen[table][key] = true;
    return &v->second;
  }

  template <typename T>
  void get_int(const std::string& table, const std::string& key, T& out) {
    if (const TomlValue* v = find(table, key)) {
      if (v->kind != TomlValue::Kind::kInt) {
        throw ConfigError(table + "." + key + ": expected integer");
      }
      out = static_cast<T>(v->i);
    }
  }
  void get_float(const std::string& table, const std::string& key, double& out) {
    if (const TomlValue* v = find(table, key)) {
      if (v->kind == TomlValue::Kind::kInt) {
        out = static_cast<double>(v->i);
      } else if (v->kind == TomlValue::Kind::kFloat) {
        out = v->f;
      } else {
        throw ConfigError(table + "." + key + ": expected number");
      }
    }
  }
  void get_bool(const std::string& table, const std::string& key, bool& out) {
    if (const TomlValue* v = find(table, key)) {
      if (v->kind != TomlValue::Kind::kBool) {
        throw ConfigError(table + "." + key + ": expected true/false");
      }
      out = v->b;
    }
  }
  void get_string(const std::string& table, const std::string& key, std::string& out) {
    if (const TomlValue* v = find(table, key)) {
      if (v->kind != TomlValue::Kind::kString) {
        throw ConfigError(table + "." + key + ": expected string");
      }
      out = v->s;
    }
  }
  template <typename T>
  void get_int_array(const std::string& table, const std::string& key,
                     std::vector<T>& out) {
    if (const TomlValue* v = find(table, key)) {
      if (v->kind != TomlValue::Kind::kArray) {
        throw ConfigError(table + "." + key + ": expected array");
      }
      out.clear();
      for (const TomlValue& e : v->arr) {
        if (e.kind != TomlValue::Kind::kInt) {
          throw ConfigError(table + "." + key + ": expected integer array");
        }
        out.push_back(static_cast<T>(e.i));
      }
    }
  }

  void reject_unknown() {
    for (const auto& [table, kv] : doc) {
      for (const auto& [key, value] : kv) {
        if (!seen[table][key]) {
          throw ConfigError("unknown config key '" + table + "." + key + "'");
        }
      }
    }
  }
};

}  // namespace detail

/// Parse a config document over the defaults. Unknown keys are errors;
/// missing keys keep their defaults.
inline ExperimentConfig parse_config(std::string_view text) {
  TomlDoc doc = parse_toml(text);
  for (const auto& [table, kv] : doc) {
    if (table != "env" && table != "policy" && table != "trainer" &&
        table != "experiment") {
      throw ConfigError("unknown config table '[" + table + "]'");
    }
  }
  ExperimentConfig c;
  detail::TomlReader r{doc, {}};
  r.get_int("env", "dims", c.env.dims);
  r.get_int("env", "side", c.env.side);
  r.get_float("env", "r0", c.env.r0);
  r.get_float("env", "r1", c.env.r1);
  r.get_float("env", "r2", c.env.r2);

  r.get_int_array("policy", "hidden", c.policy.hidden);
  r.get_float("policy", "leaky_slope", c.policy.leaky_slope);
  r.get_bool("policy", "learn_pb", c.policy.learn_pb);

  std::string algorithm = to_string(c.trainer.algorithm);
  std::string objective = to_string(c.trainer.objective);
  r.get_string("trainer", "algorithm", algorithm);
  r.get_string("trainer", "objective", objective);
  if (algorithm == "gfn") {
    c.trainer.algorithm = Algorithm::kGfn;
  } else if (algorithm == "dgfn") {
    c.trainer.algorithm = Algorithm::kDgfn;
  } else {
    throw ConfigError("trainer.algorithm: expected \"gfn\" or \"dgfn\"");
  }
  if (objective == "tb") {
    c.trainer.objective = Objective::kTb;
  } else if (objective == "subtb") {
    c.trainer.objective = Objective::kSubTb;
  } else {
    throw ConfigError("trainer.objective: expected \"tb\" or \"subtb\"");
  }
  r.get_float("trainer", "subtb_lambda", c.trainer.subtb_lambda);
  r.get_int("trainer", "t_initial", c.trainer.t_initial);
  r.get_int("trainer", "t_update", c.trainer.t_update);
  r.get_float("trainer", "alpha", c.trainer.alpha);
  r.get_bool("trainer", "initial_phase_full_copy", c.trainer.initial_phase_full_copy);
  r.get_int("trainer", "batch_size", c.trainer.batch_size);
  r.get_int("trainer", "total_steps", c.trainer.total_steps);
  r.get_float("trainer", "lr_policy", c.trainer.lr_policy);
  r.get_float("trainer", "lr_logz", c.trainer.lr_logz);
  r.get_float("trainer", "exploration_eps", c.trainer.exploration_eps);
  r.get_int("trainer", "metric_every", c.trainer.metric_every);
  r.get_int("trainer", "checkpoint_every", c.trainer.checkpoint_every);

  r.get_int_array("experiment", "seeds", c.seeds);
  r.get_string("experiment", "out_dir", c.out_dir);
  r.get_int("experiment", "window_capacity", c.window_capacity);
  r.get_bool("experiment", "oracle_l1", c.oracle_l1);
  r.reject_unknown();

  c.policy.flow_head = c.trainer.objective == Objective::kSubTb;
  c.validate();
  return c;
}

/// FNV-1a over the canonical serialization with the run-identity fields
/// (seeds, output directory) blanked, so runs that differ only in seed or
/// destination share a hash and can be aggregated.
inline std::string config_hash(const ExperimentConfig& c) {
  ExperimentConfig keyed = c;
  keyed.seeds = {};
  keyed.seeds.push_back(0);  // placeholder so the config stays valid
  keyed.out_dir = "-";
  const std::string bytes = serialize_config(keyed);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[15 - i] = hex[(h >> (i * 4)) & 0xf];
  }
  buf[16] = '\0';
  return std::string(buf);
}

// --- presets -----------------------------------------------------------------

inline std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const char* scale : {"desk", "bench-8", "bench-10", "bench-12"}) {
    for (const char* alg : {"gfn", "dgfn"}) {
      for (const char* obj : {"tb", "subtb"}) {
        out.push_back(std::string("hypergrid-") + scale + "-" + alg + "-" + obj);
      }
    }
  }
  return out;
}

inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  std::string rest = name;
  const std::string prefix = "hypergrid-";
  if (rest.rfind(prefix, 0) != 0) throw ConfigError("unknown preset '" + name + "'");
  rest = rest.substr(prefix.size());

  if (rest.rfind("desk-", 0) == 0) {
    c.env.dims = 2;
    c.env.side = 8;
    c.trainer.total_steps = 2000;
    c.oracle_l1 = true;
    rest = rest.substr(5);
  } else if (rest.rfind("bench-", 0) == 0) {
    rest = rest.substr(6);
    const std::size_t dash = rest.find('-');
    if (dash == std::string::npos) throw ConfigError("unknown preset '" + name + "'");
    const std::string h = rest.substr(0, dash);
    if (h != "8" && h != "10" && h != "12") {
      throw ConfigError("unknown preset '" + name + "'");
    }
    c.env.dims = 6;
    c.env.side = std::stoi(h);
    c.trainer.total_steps = 10000;
    c.trainer.checkpoint_every = 1000;
    rest = rest.substr(dash + 1);
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }

  if (rest.rfind("gfn-", 0) == 0) {
    c.trainer.algorithm = Algorithm::kGfn;
    rest = rest.substr(4);
  } else if (rest.rfind("dgfn-", 0) == 0) {
    c.trainer.algorithm = Algorithm::kDgfn;
    rest = rest.substr(5);
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }

  if (rest == "tb") {
    c.trainer.objective = Objective::kTb;
    c.trainer.t_initial = 698;
    c.trainer.t_update = 137;
  } else if (rest == "subtb") {
    c.trainer.objective = Objective::kSubTb;
    c.trainer.t_initial = 794;
    c.trainer.t_update = 149;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }

  c.policy.flow_head = c.trainer.objective == Objective::kSubTb;
  c.out_dir = "runs/" + name;
  c.validate();
  return c;
}

}  // namespace dgfn

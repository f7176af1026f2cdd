#pragma once

// Run configuration: one `key = value` per line, `#` starts a comment.
// serialize() writes every key in a fixed order, so parse(serialize(c)) == c.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mcrnn/data.hpp"
#include "mcrnn/errors.hpp"
#include "mcrnn/model.hpp"
#include "mcrnn/optim.hpp"

namespace mcrnn {

enum class Task { lm, copy, adding };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::lm: return "lm";
    case Task::copy: return "copy";
    case Task::adding: return "adding";
  }
  return "?";
}

struct RunConfig {
  Task task = Task::lm;

  // data
  std::string train_path = "data/kjv/train.txt";
  std::string valid_path = "data/kjv/valid.txt";
  std::string test_path = "data/kjv/test.txt";
  TokenLevel level = TokenLevel::chars;
  std::size_t min_count = 1;
  std::size_t epoch_windows = 0;  // lm: cap on windows per epoch, 0 = all
  std::size_t steps_per_epoch = 50;  // synthetic tasks
  std::size_t valid_batches = 8;     // synthetic tasks
  std::size_t copy_alphabet = 8;
  std::size_t copy_payload = 5;
  std::size_t copy_blank = 30;
  std::size_t adding_length = 100;

  // model
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  int layers = 1;
  int block_size = 4;
  CellKind cell = CellKind::lstm;
  bool tie_weights = true;
  double dropout = 0.0;
  bool mix_cell_state = false;
  bool zero_head = false;

  // optimizer
  OptimConfig optim;

  // run
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  int workers = 1;
  bool baseline = false;
  bool match_parameters = true;
  bool log_wall_time = false;

  // gradcheck
  std::size_t gc_length = 7;
  std::size_t gc_lanes = 2;
  double gc_threshold = 1e-4;
  std::size_t gc_samples = 0;
  std::size_t gc_vocab = 11;

  void validate() const {
    if (block_size < 2) throw ConfigError("block_size must be >= 2");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (valid_batches < 1) throw ConfigError("valid_batches must be >= 1");
    if (gc_vocab < 1) throw ConfigError("gc_vocab must be >= 1");
    if (gc_length < 1 || gc_lanes < 1) throw ConfigError("gc_length and gc_lanes must be >= 1");
    if (!(gc_threshold > 0.0)) throw ConfigError("gc_threshold must be > 0");
    optim.validate(block_size);
    if (task != Task::lm) synthetic_spec().validate();
  }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.task = task == Task::adding ? SyntheticTask::adding : SyntheticTask::copy;
    s.length = adding_length;
    s.alphabet = copy_alphabet;
    s.payload = copy_payload;
    s.blank = copy_blank;
    s.seed = seed;
    return s;
  }

  friend bool operator==(const RunConfig&, const RunConfig&);
};

namespace detail {

struct ConfigField {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid value '" + v + "' for key '" + key + "' (expected true|false)");
}

template <typename N>
ConfigField number(const char* key, N RunConfig::*field) {
  return {key,
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return format_real(c.*field);
            else return std::to_string(c.*field);
          },
          [field, key](RunConfig& c, const std::string& v) { c.*field = parse_number<N>(key, v); }};
}

template <typename N>
ConfigField optim_number(const char* key, N OptimConfig::*field) {
  return {key,
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return format_real(c.optim.*field);
            else return std::to_string(c.optim.*field);
          },
          [field, key](RunConfig& c, const std::string& v) { c.optim.*field = parse_number<N>(key, v); }};
}

inline ConfigField flag(const char* key, bool RunConfig::*field) {
  return {key, [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); },
          [field, key](RunConfig& c, const std::string& v) { c.*field = parse_bool(key, v); }};
}

inline ConfigField text(const char* key, std::string RunConfig::*field) {
  return {key, [field](const RunConfig& c) { return c.*field; },
          [field](RunConfig& c, const std::string& v) { c.*field = v; }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      {"task", [](const RunConfig& c) { return std::string(to_string(c.task)); },
       [](RunConfig& c, const std::string& v) {
         if (v == "lm") c.task = Task::lm;
         else if (v == "copy") c.task = Task::copy;
         else if (v == "adding") c.task = Task::adding;
         else throw ConfigError("invalid value '" + v + "' for key 'task' (expected lm|copy|adding)");
       }},
      text("train_path", &RunConfig::train_path),
      text("valid_path", &RunConfig::valid_path),
      text("test_path", &RunConfig::test_path),
      {"level", [](const RunConfig& c) { return std::string(to_string(c.level)); },
       [](RunConfig& c, const std::string& v) {
         if (v == "char") c.level = TokenLevel::chars;
         else if (v == "word") c.level = TokenLevel::words;
         else throw ConfigError("invalid value '" + v + "' for key 'level' (expected char|word)");
       }},
      number("min_count", &RunConfig::min_count),
      number("epoch_windows", &RunConfig::epoch_windows),
      number("steps_per_epoch", &RunConfig::steps_per_epoch),
      number("valid_batches", &RunConfig::valid_batches),
      number("copy_alphabet", &RunConfig::copy_alphabet),
      number("copy_payload", &RunConfig::copy_payload),
      number("copy_blank", &RunConfig::copy_blank),
      number("adding_length", &RunConfig::adding_length),
      number("embed_dim", &RunConfig::embed_dim),
      number("hidden_dim", &RunConfig::hidden_dim),
      number("layers", &RunConfig::layers),
      number("block_size", &RunConfig::block_size),
      {"cell", [](const RunConfig& c) { return std::string(c.cell == CellKind::lstm ? "lstm" : "vanilla"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "lstm") c.cell = CellKind::lstm;
         else if (v == "vanilla") c.cell = CellKind::vanilla;
         else throw ConfigError("invalid value '" + v + "' for key 'cell' (expected vanilla|lstm)");
       }},
      flag("tie_weights", &RunConfig::tie_weights),
      number("dropout", &RunConfig::dropout),
      flag("mix_cell_state", &RunConfig::mix_cell_state),
      flag("zero_head", &RunConfig::zero_head),
      optim_number("lr", &OptimConfig::lr),
      optim_number("clip", &OptimConfig::clip),
      optim_number("window", &OptimConfig::window),
      optim_number("batch_size", &OptimConfig::batch_size),
      optim_number("patience", &OptimConfig::patience),
      optim_number("halvings", &OptimConfig::halvings),
      optim_number("max_epochs", &OptimConfig::max_epochs),
      optim_number("momentum", &OptimConfig::momentum),
      number("seed", &RunConfig::seed),
      text("out_dir", &RunConfig::out_dir),
      number("workers", &RunConfig::workers),
      flag("baseline", &RunConfig::baseline),
      flag("match_parameters", &RunConfig::match_parameters),
      flag("log_wall_time", &RunConfig::log_wall_time),
      number("gc_length", &RunConfig::gc_length),
      number("gc_lanes", &RunConfig::gc_lanes),
      number("gc_threshold", &RunConfig::gc_threshold),
      number("gc_samples", &RunConfig::gc_samples),
      number("gc_vocab", &RunConfig::gc_vocab),
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields())
    if (key == f.key) {
      f.set(c, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
  for (const auto& f : detail::config_fields())
    if (key == f.key) return f.get(c);
  throw ConfigError("unknown config key '" + key + "'");
}

// Applies `key = value` lines on top of `base` (defaults unless given).
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    set_config_value(base, key, value);
  }
  return base;
}

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return serialize_config(a) == serialize_config(b); }

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace mcrnn

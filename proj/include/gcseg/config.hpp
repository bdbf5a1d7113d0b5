#pragma once

// Flat key=value run configuration. Files hold one `key = value` per line,
// `#` starts a comment. Keys are namespaced; unknown keys are rejected.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gcseg/data.hpp"
#include "gcseg/errors.hpp"
#include "gcseg/train.hpp"

namespace gcseg {

struct RunConfig {
  TrainConfig train;
  SyntheticSpec data;
  std::vector<double> attack_eps = default_epsilons();
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InvalidArgument(key + ": expected a number, got '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InvalidArgument(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_number(v[i]);
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  auto num = [](double v) { return format_number(v); };
  auto i32 = [](const std::string& k, const std::string& v) { return static_cast<int>(parse_int(k, v)); };
  static const std::vector<ConfigKey> keys = {
      {"seed", "seed for initialisation, data generation and batch order",
       [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& v) {
         const auto s = static_cast<std::uint64_t>(parse_int("seed", v));
         c.train.seed = c.train.model.seed = c.data.seed = s;
       }},
      {"model.depth", "encoder levels", [](const RunConfig& c) { return std::to_string(c.train.model.depth); },
       [=](RunConfig& c, const std::string& v) { c.train.model.depth = i32("model.depth", v); }},
      {"model.base_channels", "channels at full resolution",
       [](const RunConfig& c) { return std::to_string(c.train.model.base_channels); },
       [=](RunConfig& c, const std::string& v) { c.train.model.base_channels = i32("model.base_channels", v); }},
      {"model.head_channels", "feature channels of the n-link branch",
       [](const RunConfig& c) { return std::to_string(c.train.model.head_channels); },
       [=](RunConfig& c, const std::string& v) { c.train.model.head_channels = i32("model.head_channels", v); }},
      {"model.residual", "residual connections in the conv triples",
       [](const RunConfig& c) { return std::string(c.train.model.residual ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.model.residual = parse_bool("model.residual", v); }},
      {"graph.gamma", "n-link weight", [=](const RunConfig& c) { return num(c.train.model.gamma); },
       [](RunConfig& c, const std::string& v) { c.train.model.gamma = parse_double("graph.gamma", v); }},
      {"train.mode", "gcdlseg or nographcut", [](const RunConfig& c) { return mode_name(c.train.mode); },
       [](RunConfig& c, const std::string& v) { c.train.mode = parse_mode(v); }},
      {"train.epochs", "training epochs", [](const RunConfig& c) { return std::to_string(c.train.epochs); },
       [=](RunConfig& c, const std::string& v) { c.train.epochs = i32("train.epochs", v); }},
      {"train.batch_size", "images per step", [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
       [=](RunConfig& c, const std::string& v) { c.train.batch_size = i32("train.batch_size", v); }},
      {"train.lr", "Adam learning rate", [=](const RunConfig& c) { return num(c.train.adam.lr); },
       [](RunConfig& c, const std::string& v) { c.train.adam.lr = parse_double("train.lr", v); }},
      {"train.beta1", "Adam beta1", [=](const RunConfig& c) { return num(c.train.adam.beta1); },
       [](RunConfig& c, const std::string& v) { c.train.adam.beta1 = parse_double("train.beta1", v); }},
      {"train.beta2", "Adam beta2", [=](const RunConfig& c) { return num(c.train.adam.beta2); },
       [](RunConfig& c, const std::string& v) { c.train.adam.beta2 = parse_double("train.beta2", v); }},
      {"train.adam_eps", "Adam epsilon", [=](const RunConfig& c) { return num(c.train.adam.eps); },
       [](RunConfig& c, const std::string& v) { c.train.adam.eps = parse_double("train.adam_eps", v); }},
      {"train.weight_decay", "L2 weight decay", [=](const RunConfig& c) { return num(c.train.adam.weight_decay); },
       [](RunConfig& c, const std::string& v) { c.train.adam.weight_decay = parse_double("train.weight_decay", v); }},
      {"train.checkpoint_every", "epochs between numbered checkpoints (0 = off)",
       [](const RunConfig& c) { return std::to_string(c.train.checkpoint_every); },
       [=](RunConfig& c, const std::string& v) { c.train.checkpoint_every = i32("train.checkpoint_every", v); }},
      {"train.augment", "random augmentation of training images",
       [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool("train.augment", v); }},
      {"train.init_from", "checkpoint to initialise from (empty = random init)",
       [](const RunConfig& c) { return c.train.init_from; },
       [](RunConfig& c, const std::string& v) { c.train.init_from = v; }},
      {"train.threads", "worker threads (0 = GCSEG_THREADS or all cores)",
       [](const RunConfig& c) { return std::to_string(c.train.threads); },
       [=](RunConfig& c, const std::string& v) { c.train.threads = i32("train.threads", v); }},
      {"data.count", "number of generated images", [](const RunConfig& c) { return std::to_string(c.data.count); },
       [=](RunConfig& c, const std::string& v) { c.data.count = i32("data.count", v); }},
      {"data.height", "image height", [](const RunConfig& c) { return std::to_string(c.data.height); },
       [=](RunConfig& c, const std::string& v) { c.data.height = i32("data.height", v); }},
      {"data.width", "image width", [](const RunConfig& c) { return std::to_string(c.data.width); },
       [=](RunConfig& c, const std::string& v) { c.data.width = i32("data.width", v); }},
      {"data.kinds", "object shapes, comma separated (ellipse, blob)",
       [](const RunConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.data.kinds.size(); ++i)
           out += std::string(i ? "," : "") + (c.data.kinds[i] == ObjectKind::ellipse ? "ellipse" : "blob");
         return out;
       },
       [](RunConfig& c, const std::string& v) {
         c.data.kinds.clear();
         for (const auto& k : detail::split_list(v)) {
           if (k == "ellipse") c.data.kinds.push_back(ObjectKind::ellipse);
           else if (k == "blob") c.data.kinds.push_back(ObjectKind::blob);
           else throw InvalidArgument("data.kinds: unknown kind '" + k + "'");
         }
       }},
      {"data.overlap", "intensity overlap in [0,1]", [=](const RunConfig& c) { return num(c.data.overlap); },
       [](RunConfig& c, const std::string& v) { c.data.overlap = parse_double("data.overlap", v); }},
      {"data.fg_mean", "object mean at overlap 0", [=](const RunConfig& c) { return num(c.data.fg_mean); },
       [](RunConfig& c, const std::string& v) { c.data.fg_mean = parse_double("data.fg_mean", v); }},
      {"data.bg_mean", "background mean at overlap 0", [=](const RunConfig& c) { return num(c.data.bg_mean); },
       [](RunConfig& c, const std::string& v) { c.data.bg_mean = parse_double("data.bg_mean", v); }},
      {"data.fg_std", "object noise", [=](const RunConfig& c) { return num(c.data.fg_std); },
       [](RunConfig& c, const std::string& v) { c.data.fg_std = parse_double("data.fg_std", v); }},
      {"data.bg_std", "background noise", [=](const RunConfig& c) { return num(c.data.bg_std); },
       [](RunConfig& c, const std::string& v) { c.data.bg_std = parse_double("data.bg_std", v); }},
      {"data.texture_std", "object texture noise at overlap 1", [=](const RunConfig& c) { return num(c.data.texture_std); },
       [](RunConfig& c, const std::string& v) { c.data.texture_std = parse_double("data.texture_std", v); }},
      {"data.train_frac", "fraction of images in the train split",
       [=](const RunConfig& c) { return num(c.data.train_frac); },
       [](RunConfig& c, const std::string& v) { c.data.train_frac = parse_double("data.train_frac", v); }},
      {"data.val_frac", "fraction of images in the val split", [=](const RunConfig& c) { return num(c.data.val_frac); },
       [](RunConfig& c, const std::string& v) { c.data.val_frac = parse_double("data.val_frac", v); }},
      {"attack.eps", "FGSM epsilons, comma separated",
       [](const RunConfig& c) { return detail::join_doubles(c.attack_eps); },
       [](RunConfig& c, const std::string& v) {
         c.attack_eps.clear();
         for (const auto& e : detail::split_list(v)) {
           const double x = detail::parse_double("attack.eps", e);
           if (!(x >= 0.0)) throw InvalidArgument("attack.eps values must be >= 0");
           c.attack_eps.push_back(x);
         }
       }},
  };
  return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw InvalidArgument("unknown config key '" + key + "'");
}

// Applies a config file's assignments on top of `cfg`.
inline void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string line = text.substr(pos, eol - pos);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw FormatError("config line without '=': " + line, static_cast<long long>(pos));
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    pos = eol + 1;
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) { apply_config_text(cfg, read_file(path)); }

// Applies "key=value" overrides in order.
inline void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw InvalidArgument("override '" + a + "' is not key=value");
    set_config_value(cfg, detail::trim(a.substr(0, eq)), detail::trim(a.substr(eq + 1)));
  }
}

// Every key with its current value, one per line, in table order.
inline std::string resolved_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + "=" + k.get(cfg) + "\n";
  return out;
}

inline std::string config_help() {
  const RunConfig defaults;
  std::string out = "config keys (default):\n";
  for (const auto& k : config_keys()) out += "  " + k.name + " = " + k.get(defaults) + "    " + k.help + "\n";
  return out;
}

}  // namespace gcseg

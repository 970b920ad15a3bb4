#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "autosculpt/agent/search.hpp"
#include "autosculpt/harness/dataset.hpp"

namespace autosculpt {

/// Every knob of a run. Defaults follow the reference settings (PPO, fine-tune
/// schedule, encoder and embedding sizes); desk-scale demo configs override
/// epochs and dataset size.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";

  std::string arch = "cnn";  // demo model when no topology file is given
  std::string model_path;
  std::string weights_path;

  std::size_t patterns = 6;
  std::string library_path;
  std::size_t pattern_size = 3;  // tile size for matrix patterns
  bool per_kernel = false;

  ConstraintSet constraints;
  std::optional<double> acc_drop;  // acc_floor = dense val accuracy - acc_drop
  std::size_t episodes = 100;
  PpoConfig ppo;
  double temperature = 0.25;
  std::size_t node_dim = 64;  // encoder hidden size after aggregation
  std::size_t actor_hidden = 128;
  AlphaSchedule alpha;

  Schedule finetune;
  Schedule train;

  std::string dataset = "synth";
  std::string data_dir;
  SynthSpec synth{0, 2000, 4, 16, 1, 0.5};
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_u64(key, item));
  }
  return out;
}

inline std::string list_str(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline void set_schedule(Schedule& s, const std::string& field, const std::string& key, const std::string& v) {
  if (field == "lr") s.lr = to_double(key, v);
  else if (field == "momentum") s.momentum = to_double(key, v);
  else if (field == "weight_decay") s.weight_decay = to_double(key, v);
  else if (field == "decay") s.decay = to_double(key, v);
  else if (field == "milestones") s.milestones = to_list(key, v);
  else if (field == "epochs") s.epochs = to_u64(key, v);
  else if (field == "batch") s.batch_size = to_u64(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

/// Apply one `key = value` setting.
inline void set_config(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "seed") c.seed = to_u64(key, v);
  else if (key == "out") c.out = v;
  else if (key == "arch") {
    if (v != "cnn" && v != "transformer") throw ConfigError("arch must be cnn or transformer, got '" + v + "'");
    c.arch = v;
  } else if (key == "model") c.model_path = v;
  else if (key == "weights") c.weights_path = v;
  else if (key == "patterns") {
    // a count or a library file
    std::uint64_t n = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec == std::errc() && p == v.data() + v.size()) {
      c.patterns = n;
      c.library_path.clear();
    } else {
      c.library_path = v;
    }
  } else if (key == "pattern_size") c.pattern_size = to_u64(key, v);
  else if (key == "per_kernel") c.per_kernel = to_bool(key, v);
  else if (key == "flops_target") c.constraints.flops_target = to_double(key, v);
  else if (key == "acc_floor") {
    c.constraints.acc_floor = to_double(key, v);
    c.acc_drop.reset();
  } else if (key == "acc_drop") c.acc_drop = to_double(key, v);
  else if (key == "max_inner_steps") c.constraints.max_inner_steps = to_u64(key, v);
  else if (key == "episodes") c.episodes = to_u64(key, v);
  else if (key == "actor_lr") c.ppo.actor_lr = to_double(key, v);
  else if (key == "critic_lr") c.ppo.critic_lr = to_double(key, v);
  else if (key == "gamma") c.ppo.gamma = to_double(key, v);
  else if (key == "clip") c.ppo.clip = to_double(key, v);
  else if (key == "buffer_size") c.ppo.buffer_size = to_u64(key, v);
  else if (key == "update_iters") c.ppo.update_iters = to_u64(key, v);
  else if (key == "temperature") c.temperature = to_double(key, v);
  else if (key == "node_dim") c.node_dim = to_u64(key, v);
  else if (key == "actor_hidden") c.actor_hidden = to_u64(key, v);
  else if (key == "alpha_mode") {
    if (v == "constant") c.alpha.mode = AlphaSchedule::Mode::constant;
    else if (v == "linear") c.alpha.mode = AlphaSchedule::Mode::linear;
    else throw ConfigError("alpha_mode must be constant or linear, got '" + v + "'");
  } else if (key == "alpha") c.alpha.value = to_double(key, v);
  else if (key == "alpha_start") c.alpha.start = to_double(key, v);
  else if (key == "alpha_end") c.alpha.end = to_double(key, v);
  else if (key == "alpha_span") c.alpha.span = to_u64(key, v);
  else if (key.rfind("ft_", 0) == 0) set_schedule(c.finetune, key.substr(3), key, v);
  else if (key.rfind("train_", 0) == 0) set_schedule(c.train, key.substr(6), key, v);
  else if (key == "dataset") {
    if (v != "synth" && v != "cifar10") throw ConfigError("dataset must be synth or cifar10, got '" + v + "'");
    c.dataset = v;
  } else if (key == "data_dir") c.data_dir = v;
  else if (key == "samples") c.synth.samples = to_u64(key, v);
  else if (key == "classes") c.synth.classes = to_u64(key, v);
  else if (key == "image") c.synth.image = to_u64(key, v);
  else if (key == "channels") c.synth.channels = to_u64(key, v);
  else if (key == "sigma") c.synth.sigma = to_double(key, v);
  else if (key == "template_grid") c.synth.grid = to_u64(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Flat text: one `key = value` per line, `#` starts a comment.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(ss, line)) {
    ++no;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(no) + " lacks '='");
    set_config(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c;
  apply_config_text(c, detail::read_file(path));
  return c;
}

inline void check_config(const RunConfig& c) {
  check_constraint_set(c.constraints);
  if (c.acc_drop && !(*c.acc_drop >= 0.0 && *c.acc_drop <= 1.0)) throw ConfigError("acc_drop must lie in [0, 1]");
  if (c.episodes == 0) throw ConfigError("episodes must be positive");
  if (c.library_path.empty() && (c.patterns < kMinPatterns || c.patterns > kMaxPatterns)) {
    throw ConfigError("patterns must be in [2, 10], got " + std::to_string(c.patterns));
  }
  if (!(c.ppo.gamma >= 0.0 && c.ppo.gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(c.ppo.clip > 0.0 && c.ppo.clip < 1.0)) throw ConfigError("clip must lie in (0, 1)");
  if (c.ppo.buffer_size == 0 || c.ppo.update_iters == 0) throw ConfigError("buffer_size and update_iters must be positive");
  if (!(c.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (c.node_dim == 0 || c.actor_hidden == 0) throw ConfigError("node_dim and actor_hidden must be positive");
  if (c.finetune.batch_size == 0 || c.train.batch_size == 0) throw ConfigError("batch sizes must be positive");
}

/// Resolved settings, in a fixed key order. The output directory is left
/// out so runs in different directories echo identically.
inline nlohmann::ordered_json config_echo(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["arch"] = c.arch;
  if (!c.model_path.empty()) j["model"] = c.model_path;
  if (!c.weights_path.empty()) j["weights"] = c.weights_path;
  if (c.library_path.empty()) j["patterns"] = c.patterns;
  else j["patterns"] = c.library_path;
  j["pattern_size"] = c.pattern_size;
  j["per_kernel"] = c.per_kernel;
  j["flops_target"] = c.constraints.flops_target;
  if (c.acc_drop) j["acc_drop"] = *c.acc_drop;
  else j["acc_floor"] = c.constraints.acc_floor;
  j["max_inner_steps"] = c.constraints.max_inner_steps;
  j["episodes"] = c.episodes;
  j["actor_lr"] = c.ppo.actor_lr;
  j["critic_lr"] = c.ppo.critic_lr;
  j["gamma"] = c.ppo.gamma;
  j["clip"] = c.ppo.clip;
  j["buffer_size"] = c.ppo.buffer_size;
  j["update_iters"] = c.ppo.update_iters;
  j["temperature"] = c.temperature;
  j["node_dim"] = c.node_dim;
  j["actor_hidden"] = c.actor_hidden;
  j["alpha_mode"] = c.alpha.mode == AlphaSchedule::Mode::constant ? "constant" : "linear";
  j["alpha"] = c.alpha.value;
  j["alpha_start"] = c.alpha.start;
  j["alpha_end"] = c.alpha.end;
  j["alpha_span"] = c.alpha.span;
  for (const auto& [prefix, s] : {std::pair<const char*, const Schedule*>{"ft_", &c.finetune}, {"train_", &c.train}}) {
    const std::string p = prefix;
    j[p + "lr"] = s->lr;
    j[p + "momentum"] = s->momentum;
    j[p + "weight_decay"] = s->weight_decay;
    j[p + "decay"] = s->decay;
    j[p + "milestones"] = detail::list_str(s->milestones);
    j[p + "epochs"] = s->epochs;
    j[p + "batch"] = s->batch_size;
  }
  j["dataset"] = c.dataset;
  if (c.dataset == "cifar10") j["data_dir"] = c.data_dir;
  j["samples"] = c.synth.samples;
  j["classes"] = c.synth.classes;
  j["image"] = c.synth.image;
  j["channels"] = c.synth.channels;
  j["sigma"] = c.synth.sigma;
  j["template_grid"] = c.synth.grid;
  return j;
}

inline SearchConfig search_config(const RunConfig& c) {
  SearchConfig s;
  s.episodes = c.episodes;
  s.constraints = c.constraints;
  s.ppo = c.ppo;
  s.alpha = c.alpha;
  s.agent.temperature = c.temperature;
  s.agent.hidden = c.actor_hidden;
  s.agent.encoder.hidden = c.node_dim;
  s.per_kernel = c.per_kernel;
  return s;
}

}  // namespace autosculpt

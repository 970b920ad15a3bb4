#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autosculpt/agent/ppo.hpp"
#include "autosculpt/model/train.hpp"

namespace autosculpt {

struct SearchConfig {
  std::size_t episodes = 100;
  ConstraintSet constraints;
  PpoConfig ppo;
  AlphaSchedule alpha;
  AgentConfig agent;  // agent.patterns is taken from the library
  bool per_kernel = false;
};

struct SearchLogEntry {
  std::size_t episode = 0;
  std::size_t step = 0;
  double flops_reduction = 0.0;
  double accuracy = 0.0;
  double reward = 0.0;
  std::string digest;
  bool constraints_met = false;
};

struct SearchResult {
  PatternAssignment assignment;
  ModelIR pruned;
  Metrics metrics;
  double reward = 0.0;
  bool constraints_met = false;
  std::size_t episodes_run = 0;
  std::size_t updates = 0;
  std::vector<SearchLogEntry> log;
  ActorCritic agent;
};

inline void check_constraint_set(const ConstraintSet& c) {
  if (!(c.flops_target >= 0.0 && c.flops_target <= 1.0)) throw ConfigError("flops_target must lie in [0, 1]");
  if (!(c.acc_floor >= 0.0 && c.acc_floor <= 1.0)) throw ConfigError("acc_floor must lie in [0, 1]");
  if (c.max_inner_steps == 0) throw ConfigError("max_inner_steps must be positive");
}

/// Episodic search. Every episode restarts from the dense weights and the
/// all-ones assignment; each inner step rebuilds the graph for the current
/// assignment, encodes it, samples a new assignment from the actor and scores
/// it on `val` without fine-tuning. The buffer triggers a PPO update whenever
/// it fills. Returns the best-reward assignment that met the constraints, or
/// the best-reward assignment overall with constraints_met = false.
inline SearchResult run_search(const ModelIR& dense, const Split& val, const PatternLibrary& lib,
                               const SearchConfig& cfg, std::uint64_t seed) {
  validate(dense);
  validate_library(lib);
  check_constraint_set(cfg.constraints);
  if (cfg.episodes == 0) throw ConfigError("episode budget must be positive");
  if (val.empty()) throw ValidationError("search needs a non-empty validation split");

  AgentConfig agent_cfg = cfg.agent;
  agent_cfg.patterns = lib.size();
  SearchResult res;
  res.agent = init_actor_critic(agent_cfg, split_seed(seed, 2));
  const std::uint64_t graph_seed = split_seed(seed, 1);
  Rng rng(split_seed(seed, 3));
  ReplayBuffer buffer(cfg.ppo.buffer_size);
  PpoOptimizers opt(cfg.ppo);

  std::map<std::string, double> acc_cache;
  std::map<std::string, std::shared_ptr<const DnnGraph>> graphs;  // state graph per assignment
  std::optional<std::size_t> best_met, best_any;
  std::vector<PatternAssignment> seen;

  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    const double alpha = alpha_at(cfg.alpha, ep);
    PatternAssignment current = uniform_assignment(dense, 0, cfg.per_kernel);
    for (std::size_t step = 0; step < cfg.constraints.max_inner_steps; ++step) {
      std::shared_ptr<const DnnGraph>& graph = graphs[assignment_string(current)];
      if (!graph) graph = std::make_shared<const DnnGraph>(build_graph(dense, current, lib, graph_seed));
      const Tensor g = encode(*graph, res.agent.encoder);
      const Tensor f = act(g, res.agent);
      SampledAssignment s = sample_assignment(f.data(), dense, rng, cfg.per_kernel);

      const MaskSet masks = realize_masks(dense, s.assignment, lib);
      Metrics m;
      m.flops_reduction = count_flops(dense, &masks).flops_reduction;
      const std::string key = assignment_string(s.assignment);
      if (auto it = acc_cache.find(key); it != acc_cache.end()) {
        m.accuracy = it->second;
      } else {
        m.accuracy = evaluate_accuracy(dense, val, &masks);
        acc_cache.emplace(key, m.accuracy);
      }
      const double r = compute_reward(m.flops_reduction, m.accuracy, alpha);
      const bool met = check_constraints(m, cfg.constraints);

      const std::size_t idx = res.log.size();
      res.log.push_back({ep, step, m.flops_reduction, m.accuracy, r, assignment_digest(s.assignment), met});
      seen.push_back(s.assignment);
      if (!best_any || r > res.log[*best_any].reward) best_any = idx;
      if (met && (!best_met || r > res.log[*best_met].reward)) best_met = idx;

      buffer.push({graph, f.vec(), s.assignment, s.counts, s.log_prob, r, ep, step, met});
      if (buffer.full()) {
        ppo_update(buffer, res.agent, opt, cfg.ppo);
        ++res.updates;
      }
      current = std::move(s.assignment);
      if (met) break;
    }
    res.episodes_run = ep + 1;
  }

  const std::size_t pick = best_met ? *best_met : *best_any;
  res.constraints_met = best_met.has_value();
  res.assignment = seen[pick];
  res.metrics = {res.log[pick].flops_reduction, res.log[pick].accuracy};
  res.reward = res.log[pick].reward;
  res.pruned = apply_pruning(dense, res.assignment, lib);
  return res;
}

inline nlohmann::ordered_json to_json(const SearchLogEntry& e) {
  nlohmann::ordered_json j;
  j["episode"] = e.episode;
  j["step"] = e.step;
  j["flops_reduction"] = e.flops_reduction;
  j["accuracy"] = e.accuracy;
  j["reward"] = e.reward;
  j["assignment"] = e.digest;
  j["constraints_met"] = e.constraints_met;
  return j;
}

/// One JSON record per line.
inline std::string search_log_ndjson(const std::vector<SearchLogEntry>& log) {
  std::string out;
  for (const auto& e : log) out += to_json(e).dump() + "\n";
  return out;
}

inline std::vector<SearchLogEntry> parse_search_log(const std::string& text) {
  std::vector<SearchLogEntry> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("episode").get<std::size_t>(), j.at("step").get<std::size_t>(),
                     j.at("flops_reduction").get<double>(), j.at("accuracy").get<double>(), j.at("reward").get<double>(),
                     j.at("assignment").get<std::string>(), j.at("constraints_met").get<bool>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("search log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace autosculpt

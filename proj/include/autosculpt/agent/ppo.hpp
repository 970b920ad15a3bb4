#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "autosculpt/agent/actor_critic.hpp"
#include "autosculpt/numerics/optim.hpp"
#include "autosculpt/patterns/assignment.hpp"

namespace autosculpt {

struct PpoConfig {
  double actor_lr = 3e-3;
  double critic_lr = 1e-3;
  double gamma = 0.9;
  double clip = 0.2;
  std::size_t buffer_size = 32;
  std::size_t update_iters = 15;
};

struct Transition {
  std::shared_ptr<const DnnGraph> graph;
  std::vector<double> probs;          // F at sampling time
  PatternAssignment assignment;
  std::vector<std::size_t> counts;    // draws per pattern
  double log_prob = 0.0;
  double reward = 0.0;
  std::size_t episode = 0;
  std::size_t step = 0;
  bool goal = false;                  // constraints met; the episode ends here
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 32) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  void push(Transition t) {
    if (full()) throw ValidationError("replay buffer is full");
    items_.push_back(std::move(t));
  }

  bool full() const noexcept { return items_.size() == capacity_; }
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const std::vector<Transition>& items() const noexcept { return items_; }
  void clear() noexcept { items_.clear(); }

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
};

/// Returns within the buffer; the running sum restarts wherever the episode
/// changes, so returns never leak across episodes. A goal transition is an
/// absorbing state that keeps paying its reward: r / (1 - gamma). Without
/// this, ending an episode early forfeits the rewards a failing episode keeps
/// collecting, and the policy learns to avoid the constraints.
inline std::vector<double> buffer_returns(const std::vector<Transition>& items, double gamma) {
  std::vector<double> out(items.size());
  double run = 0.0;
  for (std::size_t i = items.size(); i-- > 0;) {
    if (i + 1 == items.size() || items[i + 1].episode != items[i].episode) run = 0.0;
    if (items[i].goal && gamma < 1.0) {
      run = items[i].reward / (1.0 - gamma);
    } else {
      run = items[i].reward + gamma * run;
    }
    out[i] = run;
  }
  return out;
}

/// Adam states carried across updates: encoder + actor, and critic.
struct PpoOptimizers {
  AdamState actor;
  AdamState critic;

  explicit PpoOptimizers(const PpoConfig& c = {}) {
    actor.lr = c.actor_lr;
    critic.lr = c.critic_lr;
  }
};

struct PpoStats {
  std::vector<double> returns;
  std::vector<double> advantages;
  std::vector<double> first_pass_ratios;
  std::vector<double> actor_loss;   // per pass
  std::vector<double> critic_loss;  // per pass
};

/// PPO-Clip on a full buffer. Advantages use the critic as it stands before
/// the first pass. The critic sees a detached graph embedding, so the encoder
/// is trained only through the actor objective. Clears the buffer.
inline PpoStats ppo_update(ReplayBuffer& buffer, ActorCritic& ac, PpoOptimizers& opt, const PpoConfig& cfg) {
  if (!buffer.full()) {
    throw ValidationError("ppo_update needs a full buffer (" + std::to_string(buffer.size()) + "/" +
                          std::to_string(buffer.capacity()) + ")");
  }
  const auto& items = buffer.items();
  const std::size_t n = items.size();
  PpoStats stats;
  stats.returns = buffer_returns(items, cfg.gamma);
  std::map<const DnnGraph*, double> values;
  for (std::size_t i = 0; i < n; ++i) {
    const DnnGraph* key = items[i].graph.get();
    auto it = values.find(key);
    if (it == values.end()) it = values.emplace(key, critic_value(encode(*key, ac.encoder), ac)).first;
    stats.advantages.push_back(stats.returns[i] - it->second);
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t pass = 0; pass < cfg.update_iters; ++pass) {
    Tape tape;
    std::vector<Var> enc, act, crit;
    for (const auto& p : ac.encoder.params) enc.push_back(tape.parameter(p.value));
    for (const auto& p : ac.actor) act.push_back(tape.parameter(p.value));
    for (const auto& p : ac.critic) crit.push_back(tape.parameter(p.value));

    // Transitions that share a graph object share one encoding.
    std::map<const DnnGraph*, Var> encoded;
    Var objective = tape.constant(Tensor::scalar(0.0));
    Var critic_sum = tape.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& tr = items[i];
      auto it = encoded.find(tr.graph.get());
      if (it == encoded.end()) it = encoded.emplace(tr.graph.get(), encode(*tr.graph, enc, ac.encoder.config)).first;
      const Var& g = it->second;
      const Var logp = actor_log_probs(g, act, ac.config.temperature);
      std::vector<double> counts(tr.counts.begin(), tr.counts.end());
      const Var new_lp = sum(mul(logp, tape.constant(Tensor(Shape{counts.size()}, counts))));
      const Var ratio = exp(sub(new_lp, tape.constant(Tensor::scalar(tr.log_prob))));
      if (pass == 0) stats.first_pass_ratios.push_back(ratio.value().item());
      const Var adv = tape.constant(Tensor::scalar(stats.advantages[i]));
      const Var surr = minimum(mul(ratio, adv), mul(clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
      objective = add(objective, surr);

      const Var v = critic_value(tape.constant(g.value()), crit);
      const Var err = sub(v, tape.constant(Tensor::scalar(stats.returns[i])));
      critic_sum = add(critic_sum, mul(err, err));
    }
    const Var actor_loss = scale(objective, -inv_n);
    const Var critic_loss = scale(critic_sum, inv_n);
    stats.actor_loss.push_back(actor_loss.value().item());
    stats.critic_loss.push_back(critic_loss.value().item());

    tape.backward(actor_loss);
    std::vector<Tensor*> actor_ptrs;
    std::vector<Tensor> actor_grads;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      actor_ptrs.push_back(&ac.encoder.params[i].value);
      actor_grads.push_back(enc[i].grad());
    }
    for (std::size_t i = 0; i < act.size(); ++i) {
      actor_ptrs.push_back(&ac.actor[i].value);
      actor_grads.push_back(act[i].grad());
    }
    tape.backward(critic_loss);
    std::vector<Tensor*> critic_ptrs;
    std::vector<Tensor> critic_grads;
    for (std::size_t i = 0; i < crit.size(); ++i) {
      critic_ptrs.push_back(&ac.critic[i].value);
      critic_grads.push_back(crit[i].grad());
    }
    adam_step(actor_ptrs, actor_grads, opt.actor);
    adam_step(critic_ptrs, critic_grads, opt.critic);
  }
  buffer.clear();
  return stats;
}

}  // namespace autosculpt

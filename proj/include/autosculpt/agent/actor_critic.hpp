#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "autosculpt/encoder/encoder.hpp"

namespace autosculpt {

struct AgentConfig {
  std::size_t patterns = 6;
  std::size_t hidden = 128;
  // Softmax temperature over the Tanh head; 1 caps the top probability of a
  // 2-pattern policy at 1/(1+e^-2).
  double temperature = 0.25;
  EncoderConfig encoder;
};

/// Encoder plus two MLP heads. Actor: g -> hidden (ReLU) -> n (Tanh), then
/// softmax(raw / temperature). Critic: g -> hidden (ReLU) -> 1.
struct ActorCritic {
  AgentConfig config;
  EncoderParams encoder;
  ParamList actor;   // actor.W1 [g,h], actor.b1 [h], actor.W2 [h,n], actor.b2 [n]
  ParamList critic;  // critic.W1 [g,h], critic.b1 [h], critic.W2 [h,1], critic.b2 [1]
};

namespace detail {

inline ParamList init_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  ParamList p;
  auto layer = [&](const std::string& suffix, std::size_t fan_in, std::size_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w(Shape{fan_in, fan_out});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    Tensor b(Shape{fan_out});
    for (double& v : b.data()) v = rng.uniform(-bound, bound);
    p.push_back({prefix + ".W" + suffix, std::move(w)});
    p.push_back({prefix + ".b" + suffix, std::move(b)});
  };
  layer("1", in, hidden);
  layer("2", hidden, out);
  return p;
}

/// Two-layer MLP on a single vector x [in]; returns [out].
template <class V>
V mlp2(const V& x, const V& w1, const V& b1, const V& w2, const V& b2) {
  const std::size_t in = value_of(x).size();
  const V h = relu(add(reshape(matmul(reshape(x, Shape{1, in}), w1), Shape{value_of(b1).size()}), b1));
  const std::size_t hid = value_of(h).size();
  return add(reshape(matmul(reshape(h, Shape{1, hid}), w2), Shape{value_of(b2).size()}), b2);
}

template <class V>
V actor_log_probs_impl(const V& g, std::span<const V> a, double temperature) {
  const V raw = tanh(mlp2(g, a[0], a[1], a[2], a[3]));
  return log_softmax(scale(raw, 1.0 / temperature), 0);
}

}  // namespace detail

inline ActorCritic init_actor_critic(const AgentConfig& c, std::uint64_t seed) {
  if (c.patterns < kMinPatterns || c.patterns > kMaxPatterns) {
    throw ConfigError("pattern count must be in [2, 10], got " + std::to_string(c.patterns));
  }
  if (!(c.temperature > 0.0)) throw ConfigError("actor temperature must be positive");
  ActorCritic ac;
  ac.config = c;
  ac.encoder = init_encoder(c.encoder, split_seed(seed, 0));
  Rng rng(split_seed(seed, 1));
  ac.actor = detail::init_mlp("actor", c.encoder.out, c.hidden, c.patterns, rng);
  ac.critic = detail::init_mlp("critic", c.encoder.out, c.hidden, 1, rng);
  return ac;
}

/// Raw Tanh outputs of the actor, each in (-1, 1).
inline Tensor actor_raw(const Tensor& g, const ActorCritic& ac) {
  const auto& a = ac.actor;
  return tanh(detail::mlp2(g, a[0].value, a[1].value, a[2].value, a[3].value));
}

/// Pattern distribution F.
inline Tensor act(const Tensor& g, const ActorCritic& ac) {
  for (double v : g.data())
    if (!std::isfinite(v)) throw ValidationError("graph embedding is not finite");
  return softmax(scale(actor_raw(g, ac), 1.0 / ac.config.temperature), 0);
}

inline double critic_value(const Tensor& g, const ActorCritic& ac) {
  const auto& c = ac.critic;
  return detail::mlp2(g, c[0].value, c[1].value, c[2].value, c[3].value).item();
}

/// Taped log F.
inline Var actor_log_probs(const Var& g, std::span<const Var> actor, double temperature) {
  return detail::actor_log_probs_impl(g, actor, temperature);
}

inline Var critic_value(const Var& g, std::span<const Var> critic) {
  return detail::mlp2(g, critic[0], critic[1], critic[2], critic[3]);
}

/// R = alpha * flops_reduction + (1 - alpha) * accuracy.
inline double compute_reward(double flops_reduction, double accuracy, double alpha) {
  auto unit = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + " must lie in [0, 1], got " + std::to_string(v));
  };
  unit(flops_reduction, "flops_reduction");
  unit(accuracy, "accuracy");
  unit(alpha, "alpha");
  return alpha * flops_reduction + (1.0 - alpha) * accuracy;
}

/// Dr_t = r_t + gamma * Dr_{t+1}, computed backward.
inline std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw ValidationError("discounted_returns needs at least one reward");
  std::vector<double> out(rewards.size());
  double run = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    run = rewards[i] + gamma * run;
    out[i] = run;
  }
  return out;
}

struct AlphaSchedule {
  enum class Mode { constant, linear } mode = Mode::constant;
  double value = 0.5;
  double start = 0.8;
  double end = 0.2;
  std::size_t span = 100;
};

inline double alpha_at(const AlphaSchedule& s, std::size_t episode) {
  if (s.mode == AlphaSchedule::Mode::constant) return s.value;
  if (s.span == 0) return s.end;
  const double t = std::min(1.0, static_cast<double>(episode) / static_cast<double>(s.span));
  return s.start + (s.end - s.start) * t;
}

/// Checkpoint every agent tensor in one ASCP file.
inline void save_agent(const ActorCritic& ac, const std::filesystem::path& path) {
  ParamList all = ac.encoder.params;
  all.insert(all.end(), ac.actor.begin(), ac.actor.end());
  all.insert(all.end(), ac.critic.begin(), ac.critic.end());
  save_weights(all, path);
}

inline ActorCritic load_agent(const AgentConfig& c, const std::filesystem::path& path) {
  ActorCritic ac = init_actor_critic(c, 0);
  const ParamList all = load_weights(path);
  auto fill = [&](ParamList& list) {
    for (auto& p : list) {
      const Tensor* t = find_param(all, p.name);
      if (!t) throw ValidationError("agent checkpoint lacks '" + p.name + "'");
      if (t->shape() != p.value.shape()) throw ShapeError("agent checkpoint tensor '" + p.name + "' has wrong shape");
      p.value = *t;
    }
  };
  fill(ac.encoder.params);
  fill(ac.actor);
  fill(ac.critic);
  return ac;
}

}  // namespace autosculpt

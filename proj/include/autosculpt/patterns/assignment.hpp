#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "autosculpt/model/flops.hpp"
#include "autosculpt/model/forward.hpp"
#include "autosculpt/model/ir.hpp"
#include "autosculpt/numerics/rng.hpp"
#include "autosculpt/patterns/pattern.hpp"

namespace autosculpt {

/// Pattern index per prunable operator. The vector holds one entry per
/// weight slot (conv/linear 1, attention 3 for Q/K/V, mlp_block 2); in
/// per-kernel mode a convolution holds one entry per filter instead.
struct PatternAssignment {
  std::map<std::string, std::vector<std::size_t>> indices;

  friend bool operator==(const PatternAssignment&, const PatternAssignment&) = default;
};

/// One categorical draw and every (operator, position) that receives it.
/// Residual-group members at the same position share a draw.
struct PruningDraw {
  std::vector<std::pair<std::string, std::size_t>> targets;
};

inline std::size_t positions_for(const OperatorSpec& op, bool per_kernel) {
  if (op.kind == OpKind::conv2d && per_kernel) return op.out_channels;
  return weight_slots(op.kind).size();
}

/// The draw plan for a model, in operator order.
inline std::vector<PruningDraw> pruning_draws(const ModelIR& m, bool per_kernel = false) {
  std::vector<PruningDraw> draws;
  struct GroupSlot {
    std::size_t first_draw;
    std::size_t positions;
  };
  std::map<std::string, GroupSlot> groups;
  for (const auto& op : m.operators) {
    if (!op.prunable) continue;
    const std::size_t n = positions_for(op, per_kernel);
    if (op.residual_group) {
      if (auto it = groups.find(*op.residual_group); it != groups.end()) {
        if (it->second.positions != n) {
          throw ValidationError("residual group '" + *op.residual_group +
                                "' members need equal filter counts in per-kernel mode");
        }
        for (std::size_t p = 0; p < n; ++p) draws[it->second.first_draw + p].targets.emplace_back(op.id, p);
        continue;
      }
      groups[*op.residual_group] = GroupSlot{draws.size(), n};
    }
    for (std::size_t p = 0; p < n; ++p) draws.push_back(PruningDraw{{{op.id, p}}});
  }
  return draws;
}

inline void validate_assignment(const ModelIR& m, const PatternAssignment& a, const PatternLibrary& lib) {
  std::size_t prunable = 0;
  std::map<std::string, std::vector<std::size_t>> group_indices;
  for (const auto& op : m.operators) {
    if (!op.prunable) continue;
    ++prunable;
    auto it = a.indices.find(op.id);
    if (it == a.indices.end()) throw ValidationError("assignment misses prunable operator '" + op.id + "'");
    const auto& idx = it->second;
    if (idx.size() != positions_for(op, false) && idx.size() != positions_for(op, true)) {
      throw ValidationError("assignment for '" + op.id + "' has " + std::to_string(idx.size()) + " entries");
    }
    for (auto i : idx)
      if (i >= lib.size()) throw ValidationError("assignment for '" + op.id + "' uses unknown pattern " + std::to_string(i));
    if (op.residual_group) {
      auto [g, fresh] = group_indices.emplace(*op.residual_group, idx);
      if (!fresh && g->second != idx) {
        throw ValidationError("residual group '" + *op.residual_group + "' members carry different patterns");
      }
    }
  }
  for (const auto& [id, idx] : a.indices) {
    bool known = false;
    for (const auto& op : m.operators) known = known || (op.id == id && op.prunable);
    if (!known) throw ValidationError("assignment references unknown or non-prunable operator '" + id + "'");
  }
  if (a.indices.size() != prunable) throw ValidationError("assignment does not cover the prunable operators");
}

/// Same pattern on every prunable unit.
inline PatternAssignment uniform_assignment(const ModelIR& m, std::size_t pattern, bool per_kernel = false) {
  PatternAssignment a;
  for (const auto& op : m.operators)
    if (op.prunable) a.indices[op.id] = std::vector<std::size_t>(positions_for(op, per_kernel), pattern);
  return a;
}

struct SampledAssignment {
  PatternAssignment assignment;
  double log_prob = 0.0;
  std::vector<std::size_t> counts;  // draws per pattern index
};

inline void check_distribution(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("empty pattern distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("pattern distribution has an invalid entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("pattern distribution sums to " + std::to_string(total));
}

/// One categorical draw per pruning unit from `probs`; residual groups draw
/// once. log_prob is the sum of log probs over the draws actually made.
inline SampledAssignment sample_assignment(std::span<const double> probs, const ModelIR& m, Rng& rng,
                                           bool per_kernel = false) {
  check_distribution(probs);
  const auto draws = pruning_draws(m, per_kernel);
  if (draws.empty()) throw ValidationError("model has no prunable operators");
  SampledAssignment s;
  s.counts.assign(probs.size(), 0);
  for (const auto& op : m.operators)
    if (op.prunable) s.assignment.indices[op.id].assign(positions_for(op, per_kernel), 0);
  for (const auto& d : draws) {
    const std::size_t k = rng.categorical(probs);
    s.log_prob += std::log(probs[k]);
    ++s.counts[k];
    for (const auto& [id, pos] : d.targets) s.assignment.indices[id][pos] = k;
  }
  return s;
}

/// Pattern counts over the draws of an existing assignment.
inline std::vector<std::size_t> draw_counts(const PatternAssignment& a, const ModelIR& m, std::size_t n_patterns) {
  std::vector<std::size_t> counts(n_patterns, 0);
  bool per_kernel = false;
  for (const auto& op : m.operators) {
    if (!op.prunable || op.kind != OpKind::conv2d) continue;
    const auto it = a.indices.find(op.id);
    if (it != a.indices.end() && it->second.size() != 1) per_kernel = true;
  }
  for (const auto& d : pruning_draws(m, per_kernel)) {
    const auto& [id, pos] = d.targets.front();
    const std::size_t k = a.indices.at(id).at(pos);
    if (k >= n_patterns) throw ValidationError("assignment pattern index out of range");
    ++counts[k];
  }
  return counts;
}

/// Joint log-probability of `a` under `probs`, recomputed from scratch.
inline double assignment_log_prob(std::span<const double> probs, const PatternAssignment& a, const ModelIR& m) {
  const auto counts = draw_counts(a, m, probs.size());
  double lp = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (counts[k]) lp += static_cast<double>(counts[k]) * std::log(probs[k]);
  return lp;
}

/// Binary mask of a weight tensor. Rank-4 convolution weights broadcast the
/// k x k pattern over every filter and channel; matrices tile the pattern by
/// modular repetition.
inline Tensor realize_mask(const Pattern& p, const Shape& weight_shape) {
  Tensor mask(weight_shape);
  if (weight_shape.size() == 4) {
    if (weight_shape[2] != p.rows || weight_shape[3] != p.cols) {
      throw ShapeError("pattern " + std::to_string(p.rows) + "x" + std::to_string(p.cols) +
                       " does not fit convolution kernel " + shape_str(weight_shape));
    }
    const std::size_t plane = p.rows * p.cols;
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = p.keep[i % plane];
  } else if (weight_shape.size() == 2) {
    const std::size_t cols = weight_shape[1];
    for (std::size_t i = 0; i < weight_shape[0]; ++i)
      for (std::size_t j = 0; j < cols; ++j) mask[i * cols + j] = p.at(i % p.rows, j % p.cols) ? 1.0 : 0.0;
  } else {
    throw ShapeError("patterns apply to convolution or matrix weights, got " + shape_str(weight_shape));
  }
  return mask;
}

inline double mask_keep_fraction(const Tensor& mask) {
  std::size_t kept = 0;
  for (double v : mask.data()) kept += v != 0.0 ? 1 : 0;
  return static_cast<double>(kept) / static_cast<double>(mask.size());
}

/// Realize every mask an assignment implies.
inline MaskSet realize_masks(const ModelIR& m, const PatternAssignment& a, const PatternLibrary& lib) {
  validate_assignment(m, a, lib);
  MaskSet masks;
  for (const auto& op : m.operators) {
    if (!op.prunable) continue;
    const auto& idx = a.indices.at(op.id);
    const auto slots = weight_slots(op.kind);
    if (op.kind == OpKind::conv2d && idx.size() == op.out_channels && idx.size() != slots.size()) {
      const Shape shape = weight_shape(op, "weight");
      Tensor mask(shape);
      const std::size_t per_filter = shape[1] * shape[2] * shape[3];
      for (std::size_t f = 0; f < shape[0]; ++f) {
        const Tensor fm = realize_mask(lib[idx[f]], Shape{1, shape[1], shape[2], shape[3]});
        std::copy(fm.data().begin(), fm.data().end(), mask.data().begin() + f * per_filter);
      }
      masks.emplace(weight_name(op, "weight"), std::move(mask));
      continue;
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      masks.emplace(weight_name(op, slots[s]), realize_mask(lib[idx[s]], weight_shape(op, slots[s])));
    }
  }
  return masks;
}

/// Zero masked weights (exactly +0.0); every other weight is copied bit for bit.
inline ModelIR apply_pruning(const ModelIR& m, const MaskSet& masks) {
  check_masks(m, masks);
  ModelIR out = m;
  for (auto& p : out.weights)
    if (auto it = masks.find(p.name); it != masks.end()) p.value = apply_mask(p.value, it->second);
  return out;
}

inline ModelIR apply_pruning(const ModelIR& m, const PatternAssignment& a, const PatternLibrary& lib) {
  return apply_pruning(m, realize_masks(m, a, lib));
}

inline FlopsReport count_flops(const ModelIR& m, const PatternAssignment& a, const PatternLibrary& lib) {
  const auto masks = realize_masks(m, a, lib);
  return count_flops(m, &masks);
}

inline Tensor forward(const ModelIR& m, const Tensor& batch, const PatternAssignment& a, const PatternLibrary& lib) {
  const auto masks = realize_masks(m, a, lib);
  return forward(m, batch, &masks);
}

/// Canonical text form, e.g. "conv1:2;conv2:4;conv3:4".
inline std::string assignment_string(const PatternAssignment& a) {
  std::string s;
  for (const auto& [id, idx] : a.indices) {
    if (!s.empty()) s += ';';
    s += id + ':';
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(idx[i]);
    }
  }
  return s;
}

/// FNV-1a 64 of the canonical text form, as 16 hex digits.
inline std::string assignment_digest(const PatternAssignment& a) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : assignment_string(a)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::ordered_json assignment_to_json(const PatternAssignment& a) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, idx] : a.indices) j[id] = idx;
  return j;
}

inline PatternAssignment assignment_from_json(const nlohmann::json& j) {
  PatternAssignment a;
  try {
    for (const auto& [id, v] : j.items()) a.indices[id] = v.get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed assignment: ") + e.what());
  }
  return a;
}

}  // namespace autosculpt

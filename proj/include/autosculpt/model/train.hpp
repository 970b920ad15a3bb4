#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "autosculpt/model/forward.hpp"
#include "autosculpt/numerics/optim.hpp"
#include "autosculpt/numerics/rng.hpp"

namespace autosculpt {

/// Labeled samples: images [N, ...sample shape] with N integer labels.
struct Split {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
};

/// Copy rows [begin, end) or an arbitrary index list of a batch-major tensor.
inline Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape shape = t.shape();
  const std::size_t stride = t.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data().begin() + rows[i] * stride, stride, out.data().begin() + i * stride);
  return out;
}

/// Index of the largest logit per row; ties resolve to the lowest index.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits[i * c + j] > logits[i * c + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

/// Top-1 accuracy, evaluated in fixed-size chunks in split order.
inline double evaluate_accuracy(const ModelIR& m, const Split& split, const MaskSet* masks = nullptr,
                                std::size_t chunk = 200) {
  if (split.empty()) throw ValidationError("cannot evaluate accuracy on an empty split");
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < split.size(); begin += chunk) {
    const std::size_t end = std::min(split.size(), begin + chunk);
    rows.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) rows[i - begin] = i;
    const auto pred = argmax_rows(forward(m, take_rows(split.images, rows), masks));
    for (std::size_t i = begin; i < end; ++i) correct += pred[i - begin] == split.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// SGD schedule with multi-step learning-rate decay.
struct Schedule {
  double lr = 3e-2;
  double momentum = 0.9;
  double weight_decay = 4e-5;
  double decay = 0.1;
  std::vector<std::size_t> milestones{30, 50, 70, 80, 90};
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
};

/// lr * decay^(number of milestones <= epoch), epochs counted from 0.
inline double lr_at(const Schedule& s, std::size_t epoch) {
  const auto passed = std::count_if(s.milestones.begin(), s.milestones.end(),
                                    [epoch](std::size_t m) { return m <= epoch; });
  return s.lr * std::pow(s.decay, static_cast<double>(passed));
}

/// Mini-batch SGD on cross-entropy. Masked positions get zero gradient and
/// stay exactly zero; returns the trained copy.
inline ModelIR fine_tune(const ModelIR& model, const MaskSet* masks, const Split& train, const Schedule& schedule,
                         std::uint64_t seed) {
  if (train.empty()) throw ValidationError("cannot train on an empty split");
  if (schedule.batch_size == 0) throw ConfigError("batch_size must be positive");
  ModelIR m = model;
  validate(m);
  if (masks) {
    check_masks(m, *masks);
    for (auto& p : m.weights)
      if (auto it = masks->find(p.name); it != masks->end()) p.value = apply_mask(p.value, it->second);
  }
  SgdState opt;
  opt.momentum = schedule.momentum;
  opt.weight_decay = schedule.weight_decay;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    opt.lr = lr_at(schedule, epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(split_seed(seed, epoch));
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), begin + schedule.batch_size);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      std::vector<int> labels;
      labels.reserve(rows.size());
      for (auto r : rows) labels.push_back(train.labels[r]);

      Tape tape;
      std::vector<Var> params;
      params.reserve(m.weights.size());
      for (const auto& p : m.weights) params.push_back(tape.parameter(p.value));
      Var loss = cross_entropy(forward(tape, m, params, take_rows(train.images, rows), masks), labels);
      tape.backward(loss);

      std::vector<Tensor*> ptrs;
      std::vector<Tensor> grads;
      for (std::size_t i = 0; i < params.size(); ++i) {
        ptrs.push_back(&m.weights[i].value);
        Tensor g = params[i].grad();
        if (masks) {
          if (auto it = masks->find(m.weights[i].name); it != masks->end()) g = apply_mask(g, it->second);
        }
        grads.push_back(std::move(g));
      }
      sgd_step(ptrs, grads, opt);
    }
  }
  return m;
}

/// Search-time constraint set: minimum FLOPs reduction, minimum accuracy, and
/// a cap on inner steps per episode.
struct ConstraintSet {
  double flops_target = 0.5;
  double acc_floor = 0.0;
  std::size_t max_inner_steps = 50;
};

struct Metrics {
  double flops_reduction = 0.0;
  double accuracy = 0.0;
};

inline bool check_constraints(const Metrics& metrics, const ConstraintSet& c) {
  return metrics.flops_reduction >= c.flops_target && metrics.accuracy >= c.acc_floor;
}

}  // namespace autosculpt

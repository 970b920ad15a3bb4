#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autosculpt/model/ir.hpp"
#include "autosculpt/numerics/autodiff.hpp"

namespace autosculpt {

/// Realized binary masks keyed by weight name ("conv1.weight", "enc0.attn.W_Q").
/// Weights without an entry run dense.
using MaskSet = std::map<std::string, Tensor>;

/// Fixed sinusoidal position table [T,d] added after the token embedding.
inline Tensor positional_encoding(std::size_t tokens, std::size_t d) {
  Tensor pe(Shape{tokens, d});
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(t) / rate;
      pe[t * d + i] = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  return pe;
}

inline void check_masks(const ModelIR& m, const MaskSet& masks) {
  for (const auto& [name, mask] : masks) {
    const Tensor* w = find_param(m.weights, name);
    if (!w) throw ValidationError("mask refers to unknown weight '" + name + "'");
    if (w->shape() != mask.shape()) {
      throw ShapeError("mask for '" + name + "' has shape " + shape_str(mask.shape()) + ", weight is " +
                       shape_str(w->shape()));
    }
  }
}

namespace detail {

inline void check_batch(const ModelIR& m, const Shape& batch) {
  if (batch.size() != m.input_shape.size() + 1 ||
      !std::equal(m.input_shape.begin(), m.input_shape.end(), batch.begin() + 1)) {
    throw ShapeError("batch shape " + shape_str(batch) + " does not match model input " + shape_str(m.input_shape));
  }
}

/// Network body shared by the eager and taped paths. `weight(op, slot)`
/// returns the (already masked) weight in the value domain V.
template <class V, class WeightFn>
V forward_impl(const ModelIR& m, const std::vector<LayerGeometry>& geo, V x, WeightFn&& weight) {
  const std::size_t n = value_of(x).dim(0);
  const std::size_t last = m.operators.size() - 1;
  bool pooled = false;

  if (arch_of(m) == Arch::cnn) {
    std::map<std::size_t, std::size_t> span_end;  // first -> last
    for (const auto& s : residual_spans(m)) span_end[s.first] = s.last;
    std::optional<V> skip;
    std::size_t skip_until = 0;
    for (std::size_t i = 0; i < m.operators.size(); ++i) {
      const auto& op = m.operators[i];
      if (op.kind == OpKind::conv2d) {
        if (auto it = span_end.find(i); it != span_end.end()) {
          skip = x;
          skip_until = it->second;
        }
        V y = conv2d(x, weight(op, "weight"), op.stride, op.padding);
        if (skip && skip_until == i) {
          y = add(y, pad_axis(*skip, 1, op.out_channels));
          skip.reset();
        }
        x = relu(y);
      } else {
        if (!pooled) {
          const Shape& s = geo[i - 1].out;
          x = mean_axis(reshape(x, Shape{n, s[0], s[1] * s[2]}), 2);
          pooled = true;
        }
        x = matmul(x, weight(op, "weight"));
        if (i != last) x = relu(x);
      }
    }
    return x;
  }

  const std::size_t tokens = m.input_shape[0];
  for (std::size_t i = 0; i < m.operators.size(); ++i) {
    const auto& op = m.operators[i];
    switch (op.kind) {
      case OpKind::linear:
        if (i == 0) {
          x = reshape(x, Shape{n * tokens, m.input_shape[1]});
          x = reshape(matmul(x, weight(op, "weight")), Shape{n, tokens, op.out_features});
          x = add(x, lift(x, positional_encoding(tokens, op.out_features)));
        } else {
          if (!pooled) {
            x = mean_axis(x, 1);
            pooled = true;
          }
          x = matmul(x, weight(op, "weight"));
          if (i != last) x = relu(x);
        }
        break;
      case OpKind::attention: {
        const std::size_t d = op.embed, dk = op.head_dim;
        V flat = reshape(x, Shape{n * tokens, d});
        V q = reshape(matmul(flat, weight(op, "W_Q")), Shape{n, tokens, dk});
        V k = reshape(matmul(flat, weight(op, "W_K")), Shape{n, tokens, dk});
        V v = reshape(matmul(flat, weight(op, "W_V")), Shape{n, tokens, dk});
        V scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
        V mixed = bmm(softmax(scores, 2), v);
        x = add(x, pad_axis(mixed, 2, d));
        break;
      }
      case OpKind::mlp_block: {
        V flat = reshape(x, Shape{n * tokens, op.embed});
        V h = relu(matmul(flat, weight(op, "W_1")));
        x = add(x, reshape(matmul(h, weight(op, "W_2")), Shape{n, tokens, op.embed}));
        break;
      }
      case OpKind::conv2d:
        break;
    }
  }
  return x;
}

}  // namespace detail

/// Eager forward pass producing logits [N, class_count]. With masks, each
/// masked weight position contributes exactly zero.
inline Tensor forward(const ModelIR& m, const Tensor& batch, const MaskSet* masks = nullptr) {
  const auto geo = validate(m);
  detail::check_batch(m, batch.shape());
  if (masks) check_masks(m, *masks);
  auto weight = [&](const OperatorSpec& op, const std::string& slot) -> Tensor {
    const auto name = weight_name(op, slot);
    const Tensor& w = m.weight(name);
    if (masks) {
      if (auto it = masks->find(name); it != masks->end()) return apply_mask(w, it->second);
    }
    return w;
  };
  return detail::forward_impl<Tensor>(m, geo, batch, weight);
}

/// Taped forward pass. `params` holds one tape variable per entry of
/// m.weights, in the same order.
inline Var forward(Tape& tape, const ModelIR& m, std::span<const Var> params, const Tensor& batch,
                   const MaskSet* masks = nullptr) {
  const auto geo = validate(m);
  detail::check_batch(m, batch.shape());
  if (params.size() != m.weights.size()) throw ShapeError("taped forward needs one variable per model weight");
  if (masks) check_masks(m, *masks);
  auto weight = [&](const OperatorSpec& op, const std::string& slot) -> Var {
    const auto name = weight_name(op, slot);
    for (std::size_t i = 0; i < m.weights.size(); ++i) {
      if (m.weights[i].name != name) continue;
      if (masks) {
        if (auto it = masks->find(name); it != masks->end()) return apply_mask(params[i], it->second);
      }
      return params[i];
    }
    throw ValidationError("missing weight '" + name + "'");
  };
  return detail::forward_impl<Var>(m, geo, tape.constant(batch), weight);
}

}  // namespace autosculpt

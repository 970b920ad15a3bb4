#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "autosculpt/numerics/tensor.hpp"

namespace autosculpt {

struct SgdState {
  double lr = 3e-2;
  double momentum = 0.9;
  double weight_decay = 4e-5;
  std::vector<Tensor> buffers;  // one per parameter, created on first step
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

namespace detail {

inline void check_step_shapes(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer got " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw ShapeError("optimizer shape mismatch: param " + shape_str(params[i]->shape()) + " vs grad " +
                       shape_str(grads[i].shape()));
    }
  }
}

inline void ensure_buffers(std::vector<Tensor>& bufs, std::span<Tensor* const> params) {
  if (bufs.empty()) {
    for (auto* p : params) bufs.emplace_back(p->shape());
  } else if (bufs.size() != params.size()) {
    throw ShapeError("optimizer state was built for a different parameter list");
  } else {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (bufs[i].shape() != params[i]->shape())
        throw ShapeError("optimizer buffer shape does not match parameter " + shape_str(params[i]->shape()));
  }
}

}  // namespace detail

/// Momentum SGD with weight decay folded into the gradient as an L2 term:
/// d = g + wd*w; buf = mu*buf + d; w -= lr*buf.
inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, SgdState& state) {
  detail::check_step_shapes(params, grads);
  detail::ensure_buffers(state.buffers, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    Tensor& buf = state.buffers[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = g[j] + state.weight_decay * w[j];
      buf[j] = state.momentum * buf[j] + d;
      w[j] -= state.lr * buf[j];
    }
  }
}

/// Adam with bias-corrected moments.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  detail::check_step_shapes(params, grads);
  detail::ensure_buffers(state.m, params);
  detail::ensure_buffers(state.v, params);
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace autosculpt

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "autosculpt/numerics/kernels.hpp"

namespace autosculpt {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while its
/// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Accumulated gradient after Tape::backward (zeros if never reached).
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run tape. Nodes are appended in evaluation order, so the reverse
/// of insertion order is a valid topological order for backward.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(Tensor value) { return push(std::move(value), true, nullptr); }
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  /// Record an op result. The node requires grad iff any parent does; the
  /// backward closure is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool rg = false;
    for (const auto& p : parents) {
      check_same_tape(p);
      rg = rg || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }

  Tensor grad(std::size_t id) const {
    const auto& n = nodes_.at(id);
    return n.has_grad ? n.grad : Tensor(n.value.shape());
  }

  void accumulate(const Var& v, const Tensor& g) {
    auto& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                       shape_str(n.value.shape()));
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
  }

  /// Reverse sweep from a scalar loss.
  void backward(const Var& loss) {
    check_same_tape(loss);
    const auto& ln = nodes_[loss.id()];
    if (ln.value.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + shape_str(ln.value.shape()));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    accumulate(loss, Tensor(ln.value.shape(), 1.0));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Id the next recorded node will receive; lets a backward rule refer to
  /// its own output value.
  std::size_t next_id() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool rg, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), rg, false, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  void check_same_tape(const Var& v) const {
    if (v.tape() != this) throw ShapeError("variable belongs to a different tape");
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline Tensor Var::grad() const { return tape_->grad(id_); }

/// Lift a constant into the value domain of `like` (eager or taped).
inline Tensor lift(const Tensor&, Tensor t) { return t; }
inline Var lift(const Var& like, Tensor t) { return like.tape()->constant(std::move(t)); }

inline const Tensor& value_of(const Tensor& t) { return t; }
inline const Tensor& value_of(const Var& v) { return v.value(); }

// ---------------------------------------------------------------------------
// Differentiable ops. Each mirrors the eager overload of the same name.
// ---------------------------------------------------------------------------

inline Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
  Tape& t = *x.tape();
  return t.record(conv2d(x.value(), w.value(), stride, pad), {x, w},
                  [x, w, stride, pad](Tape& tp, const Tensor& g) {
                    if (tp.requires_grad(x))
                      tp.accumulate(x, kernels::conv2d_grad_input(g, w.value(), x.shape(), stride, pad));
                    if (tp.requires_grad(w))
                      tp.accumulate(w, kernels::conv2d_grad_weight(g, x.value(), w.shape(), stride, pad));
                  });
}

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, matmul(g, transpose(b.value())));
    if (tp.requires_grad(b)) tp.accumulate(b, matmul(transpose(a.value()), g));
  });
}

inline Var transpose(const Var& a) {
  return a.tape()->record(transpose(a.value()), {a},
                          [a](Tape& tp, const Tensor& g) { tp.accumulate(a, transpose(g)); });
}

inline Var bmm(const Var& a, const Var& b) {
  return a.tape()->record(bmm(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, bmm(g, transpose_last2(b.value())));
    if (tp.requires_grad(b)) tp.accumulate(b, bmm(transpose_last2(a.value()), g));
  });
}

inline Var transpose_last2(const Var& a) {
  return a.tape()->record(transpose_last2(a.value()), {a},
                          [a](Tape& tp, const Tensor& g) { tp.accumulate(a, transpose_last2(g)); });
}

inline Var add(const Var& a, const Var& b) {
  return a.tape()->record(add(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, kernels::reduce_to(g, a.shape()));
    tp.accumulate(b, kernels::reduce_to(g, b.shape()));
  });
}

inline Var sub(const Var& a, const Var& b) {
  return a.tape()->record(sub(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, kernels::reduce_to(g, a.shape()));
    tp.accumulate(b, kernels::reduce_to(scale(g, -1.0), b.shape()));
  });
}

inline Var mul(const Var& a, const Var& b) {
  return a.tape()->record(mul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, kernels::reduce_to(mul(g, b.value()), a.shape()));
    if (tp.requires_grad(b)) tp.accumulate(b, kernels::reduce_to(mul(g, a.value()), b.shape()));
  });
}

inline Var scale(const Var& x, double c) {
  return x.tape()->record(scale(x.value(), c), {x},
                          [x, c](Tape& tp, const Tensor& g) { tp.accumulate(x, scale(g, c)); });
}

namespace detail {

/// Elementwise op whose derivative depends only on (input, output).
template <class Fwd, class Deriv>
Var pointwise(const Var& x, Fwd&& fwd, Deriv deriv) {
  Tape& t = *x.tape();
  const std::size_t yid = t.next_id();
  return t.record(fwd(x.value()), {x}, [x, yid, deriv](Tape& tp, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& yv = tp.value(yid);
    Tensor dx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = g[i] * deriv(xv[i], yv[i]);
    tp.accumulate(x, dx);
  });
}

}  // namespace detail

inline Var relu(const Var& x) {
  return detail::pointwise(x, [](const Tensor& v) { return relu(v); },
                           [](double xi, double) { return xi > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& x, double slope) {
  return detail::pointwise(x, [slope](const Tensor& v) { return leaky_relu(v, slope); },
                           [slope](double xi, double) { return xi > 0.0 ? 1.0 : slope; });
}

inline Var elu(const Var& x, double alpha = 1.0) {
  return detail::pointwise(x, [alpha](const Tensor& v) { return elu(v, alpha); },
                           [alpha](double xi, double yi) { return xi > 0.0 ? 1.0 : yi + alpha; });
}

inline Var tanh(const Var& x) {
  return detail::pointwise(x, [](const Tensor& v) { return tanh(v); },
                           [](double, double yi) { return 1.0 - yi * yi; });
}

inline Var exp(const Var& x) {
  return detail::pointwise(x, [](const Tensor& v) { return exp(v); }, [](double, double yi) { return yi; });
}

inline Var log(const Var& x) {
  return detail::pointwise(x, [](const Tensor& v) { return log(v); },
                           [](double xi, double) { return 1.0 / xi; });
}

/// Gradient passes only where lo < x < hi.
inline Var clamp(const Var& x, double lo, double hi) {
  return detail::pointwise(x, [lo, hi](const Tensor& v) { return clamp(v, lo, hi); },
                           [lo, hi](double xi, double) { return (xi > lo && xi < hi) ? 1.0 : 0.0; });
}

/// Ties route the gradient to `a`.
inline Var minimum(const Var& a, const Var& b) {
  return a.tape()->record(minimum(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (a.value()[i] <= b.value()[i]) ga[i] = g[i];
      else gb[i] = g[i];
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

inline Var softmax(const Var& x, std::size_t axis) {
  Tape& t = *x.tape();
  const std::size_t yid = t.next_id();
  return t.record(softmax(x.value(), axis), {x}, [x, yid, axis](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(yid);
    const auto s = kernels::split_axis(y.shape(), axis);
    Tensor dx(y.shape());
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          dx[idx] = y[idx] * (g[idx] - dot);
        }
      }
    tp.accumulate(x, dx);
  });
}

inline Var log_softmax(const Var& x, std::size_t axis) {
  Tape& t = *x.tape();
  const std::size_t yid = t.next_id();
  return t.record(log_softmax(x.value(), axis), {x}, [x, yid, axis](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(yid);
    const auto s = kernels::split_axis(y.shape(), axis);
    Tensor dx(y.shape());
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double gsum = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          dx[idx] = g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    tp.accumulate(x, dx);
  });
}

inline Var sum(const Var& x) {
  return x.tape()->record(sum(x.value()), {x}, [x](Tape& tp, const Tensor& g) {
    tp.accumulate(x, Tensor(x.shape(), g[0]));
  });
}

inline Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return x.tape()->record(mean(x.value()), {x}, [x, n](Tape& tp, const Tensor& g) {
    tp.accumulate(x, Tensor(x.shape(), g[0] / n));
  });
}

inline Var mean_axis(const Var& x, std::size_t axis) {
  return x.tape()->record(mean_axis(x.value(), axis), {x}, [x, axis](Tape& tp, const Tensor& g) {
    const auto s = kernels::split_axis(x.shape(), axis);
    Tensor dx(x.shape());
    const double inv = 1.0 / static_cast<double>(s.n);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t i = 0; i < s.inner; ++i) dx[(o * s.n + j) * s.inner + i] = g[o * s.inner + i] * inv;
    tp.accumulate(x, dx);
  });
}

inline Var reshape(const Var& x, Shape shape) {
  return x.tape()->record(reshape(x.value(), std::move(shape)), {x},
                          [x](Tape& tp, const Tensor& g) { tp.accumulate(x, g.reshaped(x.shape())); });
}

inline Var gather_rows(const Var& x, std::span<const std::size_t> idx) {
  std::vector<std::size_t> ids(idx.begin(), idx.end());
  return x.tape()->record(gather_rows(x.value(), idx), {x}, [x, ids](Tape& tp, const Tensor& g) {
    const std::size_t d = x.shape()[1];
    Tensor dx(x.shape());
    for (std::size_t e = 0; e < ids.size(); ++e)
      for (std::size_t j = 0; j < d; ++j) dx[ids[e] * d + j] += g[e * d + j];
    tp.accumulate(x, dx);
  });
}

inline Var segment_sum(const Var& x, std::span<const std::size_t> seg, std::size_t nseg) {
  std::vector<std::size_t> ids(seg.begin(), seg.end());
  return x.tape()->record(segment_sum(x.value(), seg, nseg), {x}, [x, ids](Tape& tp, const Tensor& g) {
    tp.accumulate(x, gather_rows(g, ids));
  });
}

inline Var segment_softmax(const Var& scores, std::span<const std::size_t> seg, std::size_t nseg) {
  std::vector<std::size_t> ids(seg.begin(), seg.end());
  Tape& t = *scores.tape();
  const std::size_t yid = t.next_id();
  return t.record(segment_softmax(scores.value(), seg, nseg), {scores}, [scores, ids, nseg, yid](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(yid);
    std::vector<double> dot(nseg, 0.0);
    for (std::size_t e = 0; e < ids.size(); ++e) dot[ids[e]] += g[e] * y[e];
    Tensor dx(y.shape());
    for (std::size_t e = 0; e < ids.size(); ++e) dx[e] = y[e] * (g[e] - dot[ids[e]]);
    tp.accumulate(scores, dx);
  });
}

inline Var scale_rows(const Var& x, const Var& w) {
  return x.tape()->record(scale_rows(x.value(), w.value()), {x, w}, [x, w](Tape& tp, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const std::size_t d = xv.shape()[1];
    if (tp.requires_grad(x)) tp.accumulate(x, scale_rows(g, wv));
    if (tp.requires_grad(w)) {
      Tensor dw(wv.shape());
      for (std::size_t e = 0; e < wv.size(); ++e)
        for (std::size_t j = 0; j < d; ++j) dw[e] += g[e * d + j] * xv[e * d + j];
      tp.accumulate(w, dw);
    }
  });
}

inline Var pad_axis(const Var& x, std::size_t axis, std::size_t size) {
  return x.tape()->record(pad_axis(x.value(), axis, size), {x}, [x, axis, size](Tape& tp, const Tensor& g) {
    const auto s = kernels::split_axis(x.shape(), axis);
    Tensor dx(x.shape());
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(g.data().begin() + o * size * s.inner, s.n * s.inner, dx.data().begin() + o * s.n * s.inner);
    tp.accumulate(x, dx);
  });
}

/// Masked positions receive exactly zero gradient.
inline Var apply_mask(const Var& w, const Tensor& mask) {
  return w.tape()->record(apply_mask(w.value(), mask), {w},
                          [w, mask](Tape& tp, const Tensor& g) { tp.accumulate(w, apply_mask(g, mask)); });
}

inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  std::vector<int> ls(labels.begin(), labels.end());
  return logits.tape()->record(cross_entropy(logits.value(), labels), {logits},
                               [logits, ls](Tape& tp, const Tensor& g) {
                                 Tensor p = softmax(logits.value(), 1);
                                 const std::size_t c = p.shape()[1];
                                 const double inv = g[0] / static_cast<double>(ls.size());
                                 for (std::size_t i = 0; i < ls.size(); ++i) {
                                   p[i * c + static_cast<std::size_t>(ls[i])] -= 1.0;
                                 }
                                 tp.accumulate(logits, scale(p, inv));
                               });
}

}  // namespace autosculpt

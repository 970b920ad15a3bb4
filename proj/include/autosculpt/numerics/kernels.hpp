#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "autosculpt/numerics/tensor.hpp"

// Eager tensor operations. Every function here is also overloaded for
// autosculpt::Var in autodiff.hpp, so model code written against these names
// can run either eagerly or on a tape.

namespace autosculpt {

namespace kernels {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

struct ConvGeometry {
  std::size_t n, c, h, w, f, k, oh, ow, stride, pad;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
  if (x.size() != 4 || w.size() != 4) {
    throw ShapeError("conv2d expects input [N,C,H,W] and weight [F,C,k,k], got " + shape_str(x) +
                     " and " + shape_str(w));
  }
  if (x[1] != w[1] || w[2] != w[3]) {
    throw ShapeError("conv2d channel/kernel mismatch: input " + shape_str(x) + ", weight " + shape_str(w));
  }
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  const std::size_t k = w[2];
  if (k > x[2] + 2 * pad || k > x[3] + 2 * pad) {
    throw ShapeError("conv2d kernel larger than padded input: input " + shape_str(x) + ", weight " +
                     shape_str(w));
  }
  return {x[0], x[1], x[2], x[3], w[0], k, conv_out_dim(x[2], k, stride, pad),
          conv_out_dim(x[3], k, stride, pad), stride, pad};
}

// Each output cell accumulates its products in (c, ky, kx) order starting
// from 0.0, skipping taps that fall in the padding.
/// Output columns [lo, hi) whose input column ox * stride + off - pad is in
/// [0, in).
inline void valid_span(std::size_t off, std::size_t pad, std::size_t stride, std::size_t in, std::size_t out,
                       std::size_t& lo, std::size_t& hi) {
  lo = off >= pad ? 0 : (pad - off + stride - 1) / stride;
  hi = in + pad <= off ? 0 : std::min(out, (in + pad - off + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x.shape(), w.shape(), stride, pad);
  Tensor out(Shape{g.n, g.f, g.oh, g.ow});
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  double* od = out.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      double* plane = od + (n * g.f + f) * g.oh * g.ow;
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* xin = xd + (n * g.c + c) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t lo, hi;
            valid_span(kx, g.pad, g.stride, g.w, g.ow, lo, hi);
            const double wv = wd[((f * g.c + c) * g.k + ky) * g.k + kx];
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const double* xrow = xin + iy * g.w;
              double* orow = plane + oy * g.ow;
              for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += xrow[ox * g.stride + kx - g.pad] * wv;
            }
          }
        }
      }
    }
  }
  return out;
}

inline Tensor conv2d_grad_input(const Tensor& dy, const Tensor& w, const Shape& x_shape,
                                std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x_shape, w.shape(), stride, pad);
  Tensor dx(x_shape);
  const double* dyd = dy.data().data();
  const double* wd = w.data().data();
  double* dxd = dx.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      const double* dplane = dyd + (n * g.f + f) * g.oh * g.ow;
      for (std::size_t c = 0; c < g.c; ++c) {
        double* xin = dxd + (n * g.c + c) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t lo, hi;
            valid_span(kx, g.pad, g.stride, g.w, g.ow, lo, hi);
            const double wv = wd[((f * g.c + c) * g.k + ky) * g.k + kx];
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              double* xrow = xin + iy * g.w;
              const double* drow = dplane + oy * g.ow;
              for (std::size_t ox = lo; ox < hi; ++ox) xrow[ox * g.stride + kx - g.pad] += drow[ox] * wv;
            }
          }
        }
      }
    }
  }
  return dx;
}

inline Tensor conv2d_grad_weight(const Tensor& dy, const Tensor& x, const Shape& w_shape,
                                 std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x.shape(), w_shape, stride, pad);
  Tensor dw(w_shape);
  const double* dyd = dy.data().data();
  const double* xd = x.data().data();
  double* dwd = dw.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      const double* dplane = dyd + (n * g.f + f) * g.oh * g.ow;
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* xin = xd + (n * g.c + c) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t lo, hi;
            valid_span(kx, g.pad, g.stride, g.w, g.ow, lo, hi);
            double acc = 0.0;
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const double* xrow = xin + iy * g.w;
              const double* drow = dplane + oy * g.ow;
              for (std::size_t ox = lo; ox < hi; ++ox) acc += drow[ox] * xrow[ox * g.stride + kx - g.pad];
            }
            dwd[((f * g.c + c) * g.k + ky) * g.k + kx] += acc;
          }
        }
      }
    }
  }
  return dw;
}

/// Strides for treating `shape` as [outer, shape[axis], inner].
struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// Result shape and repeat count of a suffix broadcast. `a_is_big` tells which
/// operand supplies the output shape.
struct Broadcast {
  Shape out;
  bool a_is_big;
  std::size_t small_size;
};

inline Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const auto na = shape_numel(a);
  const auto nb = shape_numel(b);
  if (a == b) return {a, true, nb};
  if (nb == 1 && b.size() == 1) return {a, true, 1};
  if (na == 1 && a.size() == 1) return {b, false, 1};
  if (is_suffix(b, a)) return {a, true, nb};
  if (is_suffix(a, b)) return {b, false, na};
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " are not trailing-broadcast compatible");
}

/// Sum a gradient of the broadcast output down to the shape of the small operand.
inline Tensor reduce_to(const Tensor& g, const Shape& small) {
  const auto ns = shape_numel(small);
  if (g.size() == ns) return g.reshaped(small);
  Tensor out(small);
  for (std::size_t i = 0; i < g.size(); ++i) out[i % ns] += g[i];
  return out;
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F&& f) {
  const auto bc = broadcast_shapes(a.shape(), b.shape(), name);
  Tensor out(bc.out);
  const std::size_t s = bc.small_size;
  if (bc.a_is_big) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i % s]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i % s], b[i]);
  }
  return out;
}

template <class F>
Tensor unary(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

inline void check_segments(std::span<const std::size_t> seg, std::size_t count, std::size_t nseg) {
  if (seg.size() != count) {
    throw ShapeError("segment id list length " + std::to_string(seg.size()) + " does not match " +
                     std::to_string(count) + " rows");
  }
  for (auto s : seg) {
    if (s >= nseg) throw ShapeError("segment id " + std::to_string(s) + " out of range");
  }
}

}  // namespace kernels

inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  return kernels::conv2d_forward(x, w, stride, pad);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = od + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

/// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out(Shape{B, m, n});
  for (std::size_t bi = 0; bi < B; ++bi) {
    const double* ad = a.data().data() + bi * m * k;
    const double* bd = b.data().data() + bi * k * n;
    double* od = out.data().data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ad[i * k + p];
        for (std::size_t j = 0; j < n; ++j) od[i * n + j] += av * bd[p * n + j];
      }
  }
  return out;
}

/// [B,M,N] -> [B,N,M]
inline Tensor transpose_last2(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("transpose_last2 expects rank 3, got " + shape_str(a.shape()));
  const std::size_t B = a.dim(0), m = a.dim(1), n = a.dim(2);
  Tensor out(Shape{B, n, m});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[(bi * n + j) * m + i] = a[(bi * m + i) * n + j];
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return kernels::binary(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return kernels::binary(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return kernels::binary(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor scale(const Tensor& x, double c) {
  return kernels::unary(x, [c](double v) { return v * c; });
}

inline Tensor relu(const Tensor& x) {
  return kernels::unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
inline Tensor leaky_relu(const Tensor& x, double slope) {
  return kernels::unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; });
}
inline Tensor elu(const Tensor& x, double alpha = 1.0) {
  return kernels::unary(x, [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); });
}
inline Tensor tanh(const Tensor& x) {
  return kernels::unary(x, [](double v) { return std::tanh(v); });
}
inline Tensor exp(const Tensor& x) {
  return kernels::unary(x, [](double v) { return std::exp(v); });
}
inline Tensor log(const Tensor& x) {
  return kernels::unary(x, [](double v) { return std::log(v); });
}
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return kernels::unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); });
}
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("minimum shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return kernels::binary(a, b, "minimum", [](double x, double y) { return std::min(x, y); });
}

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto s = kernels::split_axis(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return out;
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto s = kernels::split_axis(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) total += std::exp(x[base + j * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = x[base + j * s.inner] - lse;
    }
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::scalar(acc);
}

inline Tensor mean(const Tensor& x) {
  return Tensor::scalar(sum(x).item() / static_cast<double>(x.size()));
}

/// Mean over one axis; that axis is removed from the shape (rank-1 input
/// gives shape [1]).
inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const auto s = kernels::split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) acc += x[(o * s.n + j) * s.inner + i];
      out[o * s.inner + i] = acc / static_cast<double>(s.n);
    }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) { return x.reshaped(std::move(shape)); }

/// Rows of x[N,D] selected by idx -> [E,D].
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  if (x.rank() != 2) throw ShapeError("gather_rows expects a matrix, got " + shape_str(x.shape()));
  if (idx.empty()) throw ShapeError("gather_rows with empty index list");
  const std::size_t d = x.dim(1);
  Tensor out(Shape{idx.size(), d});
  for (std::size_t e = 0; e < idx.size(); ++e) {
    if (idx[e] >= x.dim(0)) throw ShapeError("gather_rows index out of range");
    std::copy_n(x.data().begin() + idx[e] * d, d, out.data().begin() + e * d);
  }
  return out;
}

/// Row-wise sums grouped by segment id: x[E,D] -> [nseg,D].
inline Tensor segment_sum(const Tensor& x, std::span<const std::size_t> seg, std::size_t nseg) {
  if (x.rank() != 2) throw ShapeError("segment_sum expects a matrix, got " + shape_str(x.shape()));
  kernels::check_segments(seg, x.dim(0), nseg);
  const std::size_t d = x.dim(1);
  Tensor out(Shape{nseg, d});
  for (std::size_t e = 0; e < seg.size(); ++e)
    for (std::size_t j = 0; j < d; ++j) out[seg[e] * d + j] += x[e * d + j];
  return out;
}

/// Softmax of scores[E] within each segment (max-subtracted per segment).
inline Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> seg, std::size_t nseg) {
  if (scores.rank() != 1) throw ShapeError("segment_softmax expects a vector, got " + shape_str(scores.shape()));
  kernels::check_segments(seg, scores.size(), nseg);
  std::vector<double> mx(nseg, -std::numeric_limits<double>::infinity());
  std::vector<double> total(nseg, 0.0);
  for (std::size_t e = 0; e < seg.size(); ++e) mx[seg[e]] = std::max(mx[seg[e]], scores[e]);
  Tensor out(scores.shape());
  for (std::size_t e = 0; e < seg.size(); ++e) {
    out[e] = std::exp(scores[e] - mx[seg[e]]);
    total[seg[e]] += out[e];
  }
  for (std::size_t e = 0; e < seg.size(); ++e) out[e] /= total[seg[e]];
  return out;
}

/// Multiply row e of x[E,D] by w[e].
inline Tensor scale_rows(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 1 || w.size() != x.dim(0)) {
    throw ShapeError("scale_rows shape mismatch: " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::size_t d = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t e = 0; e < x.dim(0); ++e)
    for (std::size_t j = 0; j < d; ++j) out[e * d + j] = x[e * d + j] * w[e];
  return out;
}

/// Zero-pad `axis` up to `size` entries (new entries appended at the end).
inline Tensor pad_axis(const Tensor& x, std::size_t axis, std::size_t size) {
  const auto s = kernels::split_axis(x.shape(), axis);
  if (size < s.n) throw ShapeError("pad_axis cannot shrink axis");
  if (size == s.n) return x;
  Shape shape = x.shape();
  shape[axis] = size;
  Tensor out(shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data().begin() + o * s.n * s.inner, s.n * s.inner,
                out.data().begin() + o * size * s.inner);
  return out;
}

/// Select-style masking: positions where mask == 0 become exactly +0.0.
inline Tensor apply_mask(const Tensor& w, const Tensor& mask) {
  if (w.shape() != mask.shape()) {
    throw ShapeError("mask shape " + shape_str(mask.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = mask[i] != 0.0 ? w[i] : 0.0;
  return out;
}

inline void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0)) {
    throw ShapeError("cross_entropy expects logits [N,C] and N labels, got " + shape_str(logits.shape()) +
                     " and " + std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1)) throw ShapeError("label out of range");
  }
}

/// Mean negative log-likelihood of integer labels under softmax(logits).
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const Tensor lp = log_softmax(logits, 1);
  const std::size_t c = logits.dim(1);
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) acc -= lp[i * c + static_cast<std::size_t>(labels[i])];
  return Tensor::scalar(acc / static_cast<double>(labels.size()));
}

}  // namespace autosculpt

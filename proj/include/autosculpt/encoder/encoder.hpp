#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "autosculpt/graph/graph.hpp"
#include "autosculpt/model/io.hpp"
#include "autosculpt/numerics/autodiff.hpp"

namespace autosculpt {

enum class Activation { elu, relu, tanh };

inline Activation parse_activation(const std::string& s) {
  if (s == "elu") return Activation::elu;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

struct EncoderConfig {
  std::size_t node_dim = kNodeFeatureDim;
  std::size_t edge_dim = kEdgeFeatureDim;
  std::size_t hidden = 64;
  std::size_t out = 256;
  std::size_t rounds = 2;
  double leaky_slope = 0.2;
  Activation activation = Activation::elu;
};

/// Parameters of every round (W_s, W_t, W_e, a, W) followed by P_g. Names
/// carry the "encoder." prefix so they can share a weight file with others.
struct EncoderParams {
  EncoderConfig config;
  ParamList params;

  std::size_t round_offset(std::size_t r) const { return 5 * r; }
  const Tensor& projection() const { return params.back().value; }
};

inline constexpr const char* kRoundSlots[5] = {"W_s", "W_t", "W_e", "a", "W"};

inline std::string encoder_param_name(std::size_t round, const char* slot) {
  return "encoder.r" + std::to_string(round) + "." + slot;
}

inline std::vector<Shape> encoder_shapes(const EncoderConfig& c) {
  std::vector<Shape> shapes;
  for (std::size_t r = 0; r < c.rounds; ++r) {
    const std::size_t in = r == 0 ? c.node_dim : c.hidden;
    shapes.push_back({in, c.hidden});
    shapes.push_back({in, c.hidden});
    shapes.push_back({c.edge_dim, c.hidden});
    shapes.push_back({c.hidden, 1});
    shapes.push_back({in, c.hidden});
  }
  shapes.push_back({c.hidden, c.out});
  return shapes;
}

inline void check_encoder(const EncoderParams& p) {
  const auto shapes = encoder_shapes(p.config);
  if (p.config.rounds == 0) throw ConfigError("encoder needs at least one round");
  if (p.params.size() != shapes.size()) throw ShapeError("encoder parameter count mismatch");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (p.params[i].value.shape() != shapes[i]) {
      throw ShapeError("encoder parameter '" + p.params[i].name + "' has shape " + shape_str(p.params[i].value.shape()) +
                       ", expected " + shape_str(shapes[i]));
    }
  }
}

/// Uniform in +-1/sqrt(fan_in).
inline EncoderParams init_encoder(const EncoderConfig& c, std::uint64_t seed) {
  EncoderParams p{c, {}};
  Rng rng(seed);
  const auto shapes = encoder_shapes(c);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const bool last = i + 1 == shapes.size();
    const std::string name = last ? "encoder.P_g" : encoder_param_name(i / 5, kRoundSlots[i % 5]);
    Tensor t(shapes[i]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shapes[i][0]));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    p.params.push_back({name, std::move(t)});
  }
  return p;
}

/// Directed edges seen from both ends: pair i asks target[i] to attend to
/// source[i] through edge[i].
struct Neighborhood {
  std::vector<std::size_t> target;
  std::vector<std::size_t> source;
  std::vector<std::size_t> edge;
};

inline Neighborhood neighborhood(const DnnGraph& g) {
  Neighborhood nb;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& ed = g.edges[e];
    nb.target.push_back(ed.dst);
    nb.source.push_back(ed.src);
    nb.edge.push_back(e);
    nb.target.push_back(ed.src);
    nb.source.push_back(ed.dst);
    nb.edge.push_back(e);
  }
  std::vector<std::size_t> degree(g.nodes.size(), 0);
  for (auto t : nb.target) ++degree[t];
  for (std::size_t k = 0; k < degree.size(); ++k)
    if (degree[k] == 0) throw ValidationError("graph node " + std::to_string(k) + " has no neighbors");
  return nb;
}

/// Per-round attention weights, one entry per neighborhood pair.
struct EncoderTrace {
  Neighborhood pairs;
  std::vector<Tensor> alpha;
  std::vector<Tensor> node_features;  // after each round
};

namespace detail {

template <class V>
V activate(const V& x, Activation a) {
  switch (a) {
    case Activation::elu: return elu(x);
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
  }
  return x;
}

/// Attention weights of one round (before the value mix).
template <class V>
V round_alpha(const V& h, const Tensor& edge_feats, const Neighborhood& nb, std::span<const V> p, double slope,
              std::size_t nodes) {
  const V& ws = p[0];
  const V& wt = p[1];
  const V& we = p[2];
  const V& a = p[3];
  const V ep = matmul(lift(ws, edge_feats), we);
  V z = add(add(gather_rows(matmul(h, ws), nb.target), gather_rows(matmul(h, wt), nb.source)), gather_rows(ep, nb.edge));
  z = leaky_relu(z, slope);
  const V scores = reshape(matmul(z, a), Shape{nb.target.size()});
  return segment_softmax(scores, nb.target, nodes);
}

template <class V>
V gat_round_impl(const V& h, const Tensor& edge_feats, const Neighborhood& nb, std::span<const V> p,
                 const EncoderConfig& c, std::size_t nodes, EncoderTrace* trace) {
  const V alpha = round_alpha(h, edge_feats, nb, p, c.leaky_slope, nodes);
  const V msg = scale_rows(gather_rows(matmul(h, p[4]), nb.source), alpha);
  V out = activate(segment_sum(msg, nb.target, nodes), c.activation);
  if (trace) {
    trace->alpha.push_back(value_of(alpha));
    trace->node_features.push_back(value_of(out));
  }
  return out;
}

template <class V>
V encode_impl(const DnnGraph& g, std::span<const V> p, const EncoderConfig& c, EncoderTrace* trace) {
  if (g.nodes.empty()) throw ValidationError("cannot encode an empty graph");
  if (g.node_features.shape() != Shape{g.nodes.size(), c.node_dim} ||
      g.edge_features.shape() != Shape{g.edges.size(), c.edge_dim}) {
    throw ShapeError("graph features " + shape_str(g.node_features.shape()) + "/" + shape_str(g.edge_features.shape()) +
                     " do not match the encoder dims");
  }
  const Neighborhood nb = neighborhood(g);
  if (trace) trace->pairs = nb;
  V h = lift(p[0], g.node_features);
  for (std::size_t r = 0; r < c.rounds; ++r)
    h = gat_round_impl(h, g.edge_features, nb, p.subspan(5 * r, 5), c, g.nodes.size(), trace);
  const V pooled = reshape(mean_axis(h, 0), Shape{1, c.hidden});
  return reshape(matmul(pooled, p[5 * c.rounds]), Shape{c.out});
}

}  // namespace detail

/// Softmax-normalized scores of one round's neighborhood pairs, for node
/// features h [N, d] and round parameter index `round`.
inline Tensor attention_coefficients(const DnnGraph& g, const Tensor& h, const EncoderParams& p, std::size_t round) {
  check_encoder(p);
  if (round >= p.config.rounds) throw ValidationError("encoder has no round " + std::to_string(round));
  std::vector<Tensor> rp;
  for (std::size_t i = 0; i < 5; ++i) rp.push_back(p.params[5 * round + i].value);
  const Neighborhood nb = neighborhood(g);
  return detail::round_alpha<Tensor>(h, g.edge_features, nb, rp, p.config.leaky_slope, g.nodes.size());
}

/// One message-passing round on node features h.
inline Tensor gat_round(const DnnGraph& g, const Tensor& h, const EncoderParams& p, std::size_t round) {
  check_encoder(p);
  if (round >= p.config.rounds) throw ValidationError("encoder has no round " + std::to_string(round));
  std::vector<Tensor> rp;
  for (std::size_t i = 0; i < 5; ++i) rp.push_back(p.params[5 * round + i].value);
  const Neighborhood nb = neighborhood(g);
  return detail::gat_round_impl<Tensor>(h, g.edge_features, nb, rp, p.config, g.nodes.size(), nullptr);
}

/// Mean over nodes of [N, d] features.
inline Tensor pool_graph(const Tensor& h) {
  if (h.rank() != 2) throw ShapeError("pool_graph expects [nodes, dim], got " + shape_str(h.shape()));
  return mean_axis(h, 0);
}

/// Graph embedding g [out].
inline Tensor encode(const DnnGraph& g, const EncoderParams& p, EncoderTrace* trace = nullptr) {
  check_encoder(p);
  std::vector<Tensor> vals;
  for (const auto& np : p.params) vals.push_back(np.value);
  return detail::encode_impl<Tensor>(g, vals, p.config, trace);
}

/// Taped encoding; `params` is aligned with EncoderParams::params.
inline Var encode(const DnnGraph& g, std::span<const Var> params, const EncoderConfig& c) {
  if (params.size() != encoder_shapes(c).size()) throw ShapeError("encoder parameter count mismatch");
  return detail::encode_impl<Var>(g, params, c, nullptr);
}

inline void save_encoder(const EncoderParams& p, const std::filesystem::path& path) { save_weights(p.params, path); }

/// Reads encoder tensors from an ASCP file (other prefixes are ignored).
inline EncoderParams load_encoder(const EncoderConfig& c, const std::filesystem::path& path) {
  const ParamList all = load_weights(path);
  EncoderParams p = init_encoder(c, 0);
  for (auto& np : p.params) {
    const Tensor* t = find_param(all, np.name);
    if (!t) throw ValidationError("weight file lacks '" + np.name + "'");
    np.value = *t;
  }
  check_encoder(p);
  return p;
}

}  // namespace autosculpt

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "autosculpt/model/ir.hpp"
#include "autosculpt/numerics/rng.hpp"
#include "autosculpt/patterns/assignment.hpp"

namespace autosculpt {

inline constexpr std::size_t kNodeFeatureDim = 32;
inline constexpr std::size_t kEdgeFeatureDim = 32;

enum class NodeRole { input, kernel, output };
enum class EdgeRole { input, output, residual };

inline const char* to_string(NodeRole r) {
  switch (r) {
    case NodeRole::input: return "input";
    case NodeRole::kernel: return "kernel";
    case NodeRole::output: return "output";
  }
  return "?";
}

inline const char* to_string(EdgeRole r) {
  switch (r) {
    case EdgeRole::input: return "E_i";
    case EdgeRole::output: return "E_o";
    case EdgeRole::residual: return "residual";
  }
  return "?";
}

/// A feature-map node (input/output role) or weight node (kernel role).
/// Feature-map nodes between layers are shared: the output node of layer l
/// is the input node of layer l+1 and carries the input role only for l=0.
struct GraphNode {
  NodeRole role = NodeRole::kernel;
  std::size_t layer = 0;
  std::string op_id;       // kernel nodes only
  std::string slot;        // weight slot ("weight", "W_Q", ...)
  std::size_t filter = 0;  // filter index for convolution kernel nodes
};

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeRole role = EdgeRole::input;
};

/// Directed multigraph with per-node and per-edge feature rows.
struct DnnGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  Tensor node_features;  // [nodes, 32]
  Tensor edge_features;  // [edges, 32]

  std::size_t node_count() const { return nodes.size(); }
  std::size_t edge_count() const { return edges.size(); }
};

/// Flattened pattern mask zero-padded to 32 entries.
inline std::vector<double> embed_edge_features(const Pattern& p) {
  if (p.keep.size() > kEdgeFeatureDim) {
    throw ValidationError("pattern with " + std::to_string(p.keep.size()) + " entries does not fit a " +
                          std::to_string(kEdgeFeatureDim) + "-dim edge feature");
  }
  std::vector<double> f(kEdgeFeatureDim, 0.0);
  for (std::size_t i = 0; i < p.keep.size(); ++i) f[i] = p.keep[i];
  return f;
}

/// Weight summary for a kernel node. A conv filter [c,k,k] contributes, per
/// kernel position, the mean |w| over channels followed by the population
/// standard deviation over channels. A matrix [r,s] does the same over the
/// cells of a grid_rows x grid_cols tiling (cell (a,b) holds every entry with
/// i mod grid_rows == a and j mod grid_cols == b). The 2*cells statistics are
/// padded/truncated to 32 and divided by their max |value| when nonzero.
inline std::vector<double> embed_node_features(const Tensor& weight, std::size_t grid_rows = 0,
                                               std::size_t grid_cols = 0) {
  std::vector<std::vector<double>> cells;
  if (weight.rank() == 3) {
    const std::size_t c = weight.dim(0), kh = weight.dim(1), kw = weight.dim(2);
    cells.assign(kh * kw, {});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < kh * kw; ++p) cells[p].push_back(weight[ch * kh * kw + p]);
  } else if (weight.rank() == 2) {
    if (grid_rows == 0 || grid_cols == 0) throw ValidationError("matrix node features need a tiling grid");
    const std::size_t r = weight.dim(0), s = weight.dim(1);
    cells.assign(grid_rows * grid_cols, {});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < s; ++j) cells[(i % grid_rows) * grid_cols + (j % grid_cols)].push_back(weight[i * s + j]);
  } else {
    throw ShapeError("node features need a filter [c,k,k] or matrix, got " + shape_str(weight.shape()));
  }
  std::vector<double> stats(2 * cells.size(), 0.0);
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const auto& v = cells[p];
    if (v.empty()) continue;
    const double n = static_cast<double>(v.size());
    double abs_sum = 0.0, sum = 0.0;
    for (double x : v) {
      abs_sum += std::abs(x);
      sum += x;
    }
    const double mu = sum / n;
    double var = 0.0;
    for (double x : v) var += (x - mu) * (x - mu);
    stats[p] = abs_sum / n;
    stats[cells.size() + p] = std::sqrt(var / n);
  }
  std::vector<double> f(kNodeFeatureDim, 0.0);
  std::copy_n(stats.begin(), std::min(stats.size(), kNodeFeatureDim), f.begin());
  double mx = 0.0;
  for (double x : f) mx = std::max(mx, std::abs(x));
  if (mx > 0.0)
    for (double& x : f) x /= mx;
  return f;
}

namespace detail {

/// Accumulates nodes/edges, then fills features in a fixed order so random
/// draws never depend on the pattern assignment.
struct GraphBuilder {
  DnnGraph g;
  std::vector<std::vector<double>> node_rows;
  std::vector<std::vector<double>> edge_rows;  // empty row = draw randomly

  std::size_t add_node(GraphNode n, std::vector<double> features = {}) {
    g.nodes.push_back(std::move(n));
    node_rows.push_back(std::move(features));
    return g.nodes.size() - 1;
  }

  void add_edge(std::size_t src, std::size_t dst, EdgeRole role, std::vector<double> features = {}) {
    g.edges.push_back({src, dst, role});
    edge_rows.push_back(std::move(features));
  }

  DnnGraph finish(std::uint64_t seed) {
    Rng node_rng(split_seed(seed, 11));
    Rng edge_rng(split_seed(seed, 12));
    g.node_features = Tensor(Shape{g.nodes.size(), kNodeFeatureDim});
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      for (std::size_t j = 0; j < kNodeFeatureDim; ++j) {
        g.node_features[i * kNodeFeatureDim + j] = node_rows[i].empty() ? node_rng.uniform(-1.0, 1.0) : node_rows[i][j];
      }
    }
    g.edge_features = Tensor(Shape{g.edges.size(), kEdgeFeatureDim});
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      for (std::size_t j = 0; j < kEdgeFeatureDim; ++j) {
        g.edge_features[i * kEdgeFeatureDim + j] = edge_rows[i].empty() ? edge_rng.uniform(-1.0, 1.0) : edge_rows[i][j];
      }
    }
    return std::move(g);
  }
};

inline std::size_t pattern_at(const PatternAssignment& a, const OperatorSpec& op, std::size_t position) {
  if (!op.prunable) return 0;
  const auto& idx = a.indices.at(op.id);
  return idx.size() == 1 ? idx[0] : idx.at(position);
}

}  // namespace detail

/// CNN graph over the convolution layers: per layer one kernel node per
/// filter, E_i edges from the layer's input feature-map node carrying the
/// filter's pattern, E_o edges into the shared output node, and one residual
/// edge per residual group from the group's input node to its output node.
/// Non-prunable convolutions carry the all-ones pattern on their E_i edges.
inline DnnGraph build_cnn_graph(const ModelIR& m, const PatternAssignment& a, const PatternLibrary& lib,
                                std::uint64_t seed) {
  validate(m);
  if (arch_of(m) != Arch::cnn) throw ValidationError("build_cnn_graph needs a CNN model");
  validate_assignment(m, a, lib);
  detail::GraphBuilder b;
  std::map<std::size_t, std::size_t> fm_before;  // op index -> feature-map node feeding it
  std::map<std::size_t, std::size_t> fm_after;
  std::size_t layer = 0;
  std::size_t current = b.add_node({NodeRole::input, 0, "", "", 0});
  for (std::size_t i = 0; i < m.operators.size(); ++i) {
    const auto& op = m.operators[i];
    if (op.kind != OpKind::conv2d) continue;
    const Tensor& w = m.weight(weight_name(op, "weight"));
    const std::size_t per_filter = op.in_channels * op.kernel * op.kernel;
    std::vector<std::size_t> kernels;
    for (std::size_t f = 0; f < op.out_channels; ++f) {
      Tensor filter(Shape{op.in_channels, op.kernel, op.kernel},
                    std::vector<double>(w.data().begin() + f * per_filter, w.data().begin() + (f + 1) * per_filter));
      kernels.push_back(b.add_node({NodeRole::kernel, layer, op.id, "weight", f}, embed_node_features(filter)));
    }
    const std::size_t out = b.add_node({NodeRole::output, layer, "", "", 0});
    for (std::size_t f = 0; f < kernels.size(); ++f)
      b.add_edge(current, kernels[f], EdgeRole::input, embed_edge_features(lib[detail::pattern_at(a, op, f)]));
    for (auto k : kernels) b.add_edge(k, out, EdgeRole::output);
    fm_before[i] = current;
    fm_after[i] = out;
    current = out;
    ++layer;
  }
  for (const auto& span : residual_spans(m)) b.add_edge(fm_before.at(span.first), fm_after.at(span.last), EdgeRole::residual);
  return b.finish(seed);
}

/// Transformer graph: per encoder (attention + mlp_block) the weight nodes
/// Q, K, V, MLP1, MLP2 between a shared input node and output node, with two
/// residual edges for the skips around attention and around the MLP.
inline DnnGraph build_transformer_graph(const ModelIR& m, const PatternAssignment& a, const PatternLibrary& lib,
                                        std::uint64_t seed) {
  validate(m);
  if (arch_of(m) != Arch::transformer) throw ValidationError("build_transformer_graph needs a Transformer model");
  validate_assignment(m, a, lib);
  detail::GraphBuilder b;
  std::size_t layer = 0;
  std::size_t current = b.add_node({NodeRole::input, 0, "", "", 0});
  for (std::size_t i = 0; i + 1 < m.operators.size(); ++i) {
    const auto& attn = m.operators[i];
    if (attn.kind != OpKind::attention) continue;
    const auto& mlp = m.operators[i + 1];
    std::vector<std::pair<const OperatorSpec*, std::size_t>> weights;  // (op, slot position)
    for (std::size_t s = 0; s < 3; ++s) weights.emplace_back(&attn, s);
    for (std::size_t s = 0; s < 2; ++s) weights.emplace_back(&mlp, s);
    std::vector<std::size_t> kernels;
    for (const auto& [op, s] : weights) {
      const auto slot = weight_slots(op->kind)[s];
      kernels.push_back(b.add_node({NodeRole::kernel, layer, op->id, slot, 0},
                                   embed_node_features(m.weight(weight_name(*op, slot)), lib.rows, lib.cols)));
    }
    const std::size_t out = b.add_node({NodeRole::output, layer, "", "", 0});
    for (std::size_t k = 0; k < kernels.size(); ++k) {
      const auto& [op, s] = weights[k];
      b.add_edge(current, kernels[k], EdgeRole::input, embed_edge_features(lib[detail::pattern_at(a, *op, s)]));
    }
    for (auto k : kernels) b.add_edge(k, out, EdgeRole::output);
    b.add_edge(current, out, EdgeRole::residual);
    b.add_edge(current, out, EdgeRole::residual);
    current = out;
    ++layer;
  }
  return b.finish(seed);
}

/// Dispatch on architecture.
inline DnnGraph build_graph(const ModelIR& m, const PatternAssignment& a, const PatternLibrary& lib, std::uint64_t seed) {
  return arch_of(m) == Arch::cnn ? build_cnn_graph(m, a, lib, seed) : build_transformer_graph(m, a, lib, seed);
}

/// Debug dump: `<stem>.edges` with one "src dst role" line per edge and
/// `<stem>.features` with one line per node then per edge.
inline void dump_graph(const DnnGraph& g, const std::filesystem::path& stem) {
  std::ofstream edges(stem.string() + ".edges");
  for (const auto& e : g.edges) edges << e.src << ' ' << e.dst << ' ' << to_string(e.role) << '\n';
  std::ofstream feats(stem.string() + ".features");
  char buf[32];
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    feats << "node " << i << ' ' << to_string(g.nodes[i].role);
    for (std::size_t j = 0; j < kNodeFeatureDim; ++j) {
      std::snprintf(buf, sizeof buf, " %.17g", g.node_features[i * kNodeFeatureDim + j]);
      feats << buf;
    }
    feats << '\n';
  }
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    feats << "edge " << i;
    for (std::size_t j = 0; j < kEdgeFeatureDim; ++j) {
      std::snprintf(buf, sizeof buf, " %.17g", g.edge_features[i * kEdgeFeatureDim + j]);
      feats << buf;
    }
    feats << '\n';
  }
  if (!edges || !feats) throw ValidationError("failed writing graph dump '" + stem.string() + "'");
}

}  // namespace autosculpt

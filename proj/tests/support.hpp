#pragma once

// Independent oracles shared by the unit tests and the acceptance runner.
// Nothing here calls the library routine it is used to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "autosculpt/autosculpt.hpp"

namespace autosculpt::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Direct seven-loop convolution.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), K = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  Tensor y(Shape{N, F, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < K; ++a)
              for (std::size_t b = 0; b < K; ++b) {
                const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                acc += x[((n * C + c) * H + r) * W + s] * w[((f * C + c) * K + a) * K + b];
              }
          y[((n * F + f) * Ho + i) * Wo + j] = acc;
        }
  return y;
}

/// ||a - b|| / max(||a||, ||b||), with both norms below 1e-10 counting as a match.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  if (denom < 1e-10) return std::sqrt(diff);
  return std::sqrt(diff) / denom;
}

using TapedFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Worst relative error between reverse-mode gradients of `f` (reduced to a
/// scalar by a fixed random projection) and central differences. With
/// `coords` > 0 only that many random entries per input are probed.
inline double gradient_check(const TapedFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed,
                             double h = 1e-6, std::size_t coords = 0) {
  Tensor proj;
  auto loss_of = [&](Tape& tape, const std::vector<Var>& vars) {
    Var out = f(tape, vars);
    if (proj.empty()) {
      Rng rng(seed);
      proj = random_tensor(out.value().shape(), rng);
    }
    return sum(mul(out, tape.constant(proj)));
  };
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.parameter(t));
    Var loss = loss_of(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&](const std::vector<Tensor>& in) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : in) vars.push_back(tape.parameter(t));
    return loss_of(tape, vars).value().item();
  };
  double worst = 0.0;
  Rng pick(seed ^ 0x5eed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> idx;
    if (coords == 0 || coords >= inputs[k].size()) {
      for (std::size_t i = 0; i < inputs[k].size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < coords; ++i) idx.push_back(pick.below(inputs[k].size()));
    }
    Tensor numeric(Shape{idx.size()}), exact(Shape{idx.size()});
    std::vector<Tensor> probe = inputs;
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const std::size_t i = idx[n];
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const double up = eval(probe);
      probe[k][i] = x0 - h;
      const double down = eval(probe);
      probe[k][i] = x0;
      numeric[n] = (up - down) / (2.0 * h);
      exact[n] = analytic[k][i];
    }
    worst = std::max(worst, relative_error(exact, numeric));
  }
  return worst;
}

/// Push entries at least `gap` away from each kink so central differences
/// never straddle one.
inline void avoid_kinks(Tensor& t, std::initializer_list<double> kinks, double gap = 1e-3) {
  for (double& v : t.data())
    for (double k : kinks)
      if (std::abs(v - k) < gap) v = k + (v >= k ? gap : -gap) * 2.0;
}

struct GradCase {
  std::string op;
  TapedFn fn;
  std::vector<Tensor> inputs;
};

/// `per_op` random instances of every differentiable op.
inline std::vector<GradCase> gradient_cases(std::size_t per_op, std::uint64_t seed) {
  std::vector<GradCase> cases;
  Rng rng(seed);
  auto dim = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
  for (std::size_t i = 0; i < per_op; ++i) {
    const std::size_t r = dim(1, 4), c = dim(1, 5), k = dim(1, 4);
    cases.push_back({"matmul", [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                     {random_tensor({r, k}, rng), random_tensor({k, c}, rng)}});
    cases.push_back({"transpose", [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); },
                     {random_tensor({r, c}, rng)}});
    const std::size_t b = dim(1, 3);
    cases.push_back({"bmm", [](Tape&, const std::vector<Var>& v) { return bmm(v[0], v[1]); },
                     {random_tensor({b, r, k}, rng), random_tensor({b, k, c}, rng)}});
    cases.push_back({"transpose_last2", [](Tape&, const std::vector<Var>& v) { return transpose_last2(v[0]); },
                     {random_tensor({b, r, c}, rng)}});
    cases.push_back({"add_broadcast", [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); },
                     {random_tensor({r, c}, rng), random_tensor({c}, rng)}});
    cases.push_back({"sub", [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); },
                     {random_tensor({r, c}, rng), random_tensor({r, c}, rng)}});
    cases.push_back({"mul", [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); },
                     {random_tensor({r, c}, rng), random_tensor({r, c}, rng)}});
    const double s = rng.uniform(-2.0, 2.0);
    cases.push_back({"scale", [s](Tape&, const std::vector<Var>& v) { return scale(v[0], s); },
                     {random_tensor({r, c}, rng)}});
    Tensor kinked = random_tensor({r, c}, rng);
    avoid_kinks(kinked, {0.0});
    cases.push_back({"relu", [](Tape&, const std::vector<Var>& v) { return relu(v[0]); }, {kinked}});
    cases.push_back({"leaky_relu", [](Tape&, const std::vector<Var>& v) { return leaky_relu(v[0], 0.2); }, {kinked}});
    cases.push_back({"elu", [](Tape&, const std::vector<Var>& v) { return elu(v[0]); }, {kinked}});
    cases.push_back({"tanh", [](Tape&, const std::vector<Var>& v) { return tanh(v[0]); },
                     {random_tensor({r, c}, rng, -2.0, 2.0)}});
    cases.push_back({"exp", [](Tape&, const std::vector<Var>& v) { return exp(v[0]); },
                     {random_tensor({r, c}, rng)}});
    cases.push_back({"log", [](Tape&, const std::vector<Var>& v) { return log(v[0]); },
                     {random_tensor({r, c}, rng, 0.2, 2.0)}});
    Tensor clamped = random_tensor({r, c}, rng, -1.0, 1.0);
    avoid_kinks(clamped, {-0.4, 0.5});
    cases.push_back({"clamp", [](Tape&, const std::vector<Var>& v) { return clamp(v[0], -0.4, 0.5); }, {clamped}});
    Tensor ma = random_tensor({r, c}, rng), mb = random_tensor({r, c}, rng);
    for (std::size_t j = 0; j < ma.size(); ++j)
      if (std::abs(ma[j] - mb[j]) < 1e-3) mb[j] += 0.01;
    cases.push_back({"minimum", [](Tape&, const std::vector<Var>& v) { return minimum(v[0], v[1]); }, {ma, mb}});
    const std::size_t axis = rng.below(2);
    cases.push_back({"softmax", [axis](Tape&, const std::vector<Var>& v) { return softmax(v[0], axis); },
                     {random_tensor({r, c}, rng, -2.0, 2.0)}});
    cases.push_back({"log_softmax", [axis](Tape&, const std::vector<Var>& v) { return log_softmax(v[0], axis); },
                     {random_tensor({r, c}, rng, -2.0, 2.0)}});
    cases.push_back({"sum", [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }, {random_tensor({r, c}, rng)}});
    cases.push_back({"mean", [](Tape&, const std::vector<Var>& v) { return mean(v[0]); }, {random_tensor({r, c}, rng)}});
    const std::size_t maxis = rng.below(3);
    cases.push_back({"mean_axis", [maxis](Tape&, const std::vector<Var>& v) { return mean_axis(v[0], maxis); },
                     {random_tensor({b, r, c}, rng)}});
    cases.push_back({"reshape", [r, c](Tape&, const std::vector<Var>& v) { return reshape(v[0], Shape{c, r}); },
                     {random_tensor({r, c}, rng)}});
    std::vector<std::size_t> rows;
    for (std::size_t j = 0, n = dim(1, 6); j < n; ++j) rows.push_back(rng.below(r));
    cases.push_back({"gather_rows", [rows](Tape&, const std::vector<Var>& v) { return gather_rows(v[0], rows); },
                     {random_tensor({r, c}, rng)}});
    const std::size_t nseg = dim(1, 3), entries = dim(nseg, 7);
    std::vector<std::size_t> seg(entries);
    for (std::size_t j = 0; j < entries; ++j) seg[j] = j < nseg ? j : rng.below(nseg);
    cases.push_back({"segment_sum", [seg, nseg](Tape&, const std::vector<Var>& v) { return segment_sum(v[0], seg, nseg); },
                     {random_tensor({entries, c}, rng)}});
    cases.push_back({"segment_softmax",
                     [seg, nseg](Tape&, const std::vector<Var>& v) { return segment_softmax(v[0], seg, nseg); },
                     {random_tensor({entries}, rng, -2.0, 2.0)}});
    cases.push_back({"scale_rows", [](Tape&, const std::vector<Var>& v) { return scale_rows(v[0], v[1]); },
                     {random_tensor({r, c}, rng), random_tensor({r}, rng)}});
    const std::size_t padded = c + dim(0, 3);
    cases.push_back({"pad_axis", [padded](Tape&, const std::vector<Var>& v) { return pad_axis(v[0], 1, padded); },
                     {random_tensor({r, c}, rng)}});
    Tensor mask({r, c});
    for (double& m : mask.data()) m = rng.below(2) ? 1.0 : 0.0;
    cases.push_back({"apply_mask", [mask](Tape&, const std::vector<Var>& v) { return apply_mask(v[0], mask); },
                     {random_tensor({r, c}, rng)}});
    const std::size_t classes = dim(2, 5);
    std::vector<int> labels(r);
    for (int& l : labels) l = static_cast<int>(rng.below(classes));
    cases.push_back({"cross_entropy",
                     [labels](Tape&, const std::vector<Var>& v) { return cross_entropy(v[0], labels); },
                     {random_tensor({r, classes}, rng, -2.0, 2.0)}});
    const std::size_t ck = dim(1, 3), stride = dim(1, 2), pad = rng.below(ck);
    const std::size_t hw = dim(ck, 5);
    cases.push_back({"conv2d",
                     [stride, pad](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], stride, pad); },
                     {random_tensor({dim(1, 2), dim(1, 2), hw, hw}, rng), Tensor()}});
    cases.back().inputs[1] = random_tensor({dim(1, 3), cases.back().inputs[0].dim(1), ck, ck}, rng);
  }
  return cases;
}

/// Multiplication count of a model's forward pass for one sample, obtained
/// by walking the network with counting loops (no closed forms).
inline std::uint64_t count_multiplies(const ModelIR& m) {
  std::uint64_t count = 0;
  if (m.input_shape.size() == 3) {
    std::size_t c = m.input_shape[0], h = m.input_shape[1], w = m.input_shape[2];
    bool pooled = false;
    std::size_t features = 0;
    for (const auto& op : m.operators) {
      if (op.kind == OpKind::conv2d) {
        const std::size_t ho = (h + 2 * op.padding - op.kernel) / op.stride + 1;
        const std::size_t wo = (w + 2 * op.padding - op.kernel) / op.stride + 1;
        for (std::size_t f = 0; f < op.out_channels; ++f)
          for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j)
              for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t a = 0; a < op.kernel * op.kernel; ++a) ++count;
        c = op.out_channels;
        h = ho;
        w = wo;
      } else {
        if (!pooled) {
          features = c;
          pooled = true;
        }
        for (std::size_t i = 0; i < features; ++i)
          for (std::size_t o = 0; o < op.out_features; ++o) ++count;
        features = op.out_features;
      }
    }
    return count;
  }
  const std::size_t T = m.input_shape[0];
  bool pooled = false;
  for (std::size_t i = 0; i < m.operators.size(); ++i) {
    const auto& op = m.operators[i];
    if (op.kind == OpKind::linear) {
      const std::size_t rows = i == 0 ? T : 1;
      if (i != 0) pooled = true;
      for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t a = 0; a < op.in_features; ++a)
          for (std::size_t o = 0; o < op.out_features; ++o) ++count;
    } else if (op.kind == OpKind::attention) {
      for (int proj = 0; proj < 3; ++proj)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t a = 0; a < op.embed; ++a)
            for (std::size_t o = 0; o < op.head_dim; ++o) ++count;
      for (int mix = 0; mix < 2; ++mix)  // Q K^T, then A V
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t u = 0; u < T; ++u)
            for (std::size_t o = 0; o < op.head_dim; ++o) ++count;
    } else if (op.kind == OpKind::mlp_block) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t a = 0; a < op.embed; ++a)
          for (std::size_t o = 0; o < op.hidden; ++o) ++count;
        for (std::size_t a = 0; a < op.hidden; ++a)
          for (std::size_t o = 0; o < op.embed; ++o) ++count;
      }
    }
  }
  (void)pooled;
  return count;
}

/// Random conv stack for graph-count properties: 1-4 convolutions with
/// 1-12 filters, optionally one residual group over two adjacent layers.
inline ModelIR random_cnn(Rng& rng, bool with_residual) {
  ModelIR m;
  const std::size_t layers = with_residual ? 2 + rng.below(3) : 1 + rng.below(4);
  std::size_t in = 1 + rng.below(3);
  m.input_shape = {in, 8, 8};
  m.class_count = 2 + rng.below(3);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t out = 1 + rng.below(12);
    m.operators.push_back(conv_op("conv" + std::to_string(l + 1), in, out, 3, 1, 1));
    in = out;
  }
  if (with_residual) {
    const std::size_t first = rng.below(layers - 1);
    m.operators[first].residual_group = "res";
    m.operators[first + 1].residual_group = "res";
    // the skip is zero-padded along channels, so the tail may not shrink it
    if (m.operators[first + 1].out_channels < m.operators[first].in_channels) {
      m.operators[first + 1].out_channels = m.operators[first].in_channels;
      if (first + 2 < layers) m.operators[first + 2].in_channels = m.operators[first].in_channels;
      in = m.operators.back().out_channels;
    }
  }
  m.operators.push_back(linear_op("fc", in, m.class_count));
  init_weights(m, rng.next());
  validate(m);
  return m;
}

/// Closed-form counts for a conv stack: one input node, then per layer one
/// node per filter plus an output node; two edges per filter; one edge per
/// residual group.
struct GraphCounts {
  std::size_t nodes = 0;
  std::size_t edges = 0;
};

inline GraphCounts cnn_counts(const std::vector<std::size_t>& filters, std::size_t residual_groups) {
  GraphCounts c{1, residual_groups};
  for (auto n : filters) {
    c.nodes += n + 1;
    c.edges += 2 * n;
  }
  return c;
}

/// Five weight nodes and one output node per encoder after the shared input
/// node; five input edges, five output edges and two residual edges each.
inline GraphCounts transformer_counts(std::size_t encoders) { return {1 + 6 * encoders, 12 * encoders}; }

inline ModelIR random_transformer(Rng& rng) {
  ModelIR m;
  const std::size_t encoders = 1 + rng.below(3);
  const std::size_t tokens = 2 + rng.below(5), feats = 2 + rng.below(6);
  const std::size_t d = 4 + 2 * rng.below(5);
  m.input_shape = {tokens, feats};
  m.class_count = 2 + rng.below(3);
  m.operators.push_back(linear_op("embed", feats, d));
  for (std::size_t l = 0; l < encoders; ++l) {
    m.operators.push_back(attention_op("enc" + std::to_string(l) + ".attn", d, 1 + rng.below(d)));
    m.operators.push_back(mlp_op("enc" + std::to_string(l) + ".mlp", d, 1 + rng.below(2 * d)));
  }
  m.operators.push_back(linear_op("head", d, m.class_count));
  init_weights(m, rng.next());
  validate(m);
  return m;
}

/// Effective MACs as the sum over operators of dense MACs times the kept
/// share of that operator's weights, counted entry by entry.
inline double keep_scaled_macs(const ModelIR& m, const MaskSet& masks) {
  const auto geo = validate(m);
  double total = 0.0;
  for (std::size_t k = 0; k < m.operators.size(); ++k) {
    const auto& op = m.operators[k];
    std::uint64_t kept = 0, size = 0;
    for (const auto& slot : weight_slots(op.kind)) {
      const auto name = weight_name(op, slot);
      const Tensor& w = m.weight(name);
      size += w.size();
      auto it = masks.find(name);
      for (std::size_t j = 0; j < w.size(); ++j) kept += (it == masks.end() || it->second[j] != 0.0) ? 1 : 0;
    }
    total += static_cast<double>(dense_macs(op, geo[k])) * static_cast<double>(kept) / static_cast<double>(size);
  }
  return total;
}

/// Relabels node k as perm[k] and reverses the edge list.
inline DnnGraph permuted_graph(const DnnGraph& g, const std::vector<std::size_t>& perm) {
  DnnGraph p;
  const std::size_t n = g.nodes.size(), e = g.edges.size();
  p.nodes.resize(n);
  p.node_features = Tensor(g.node_features.shape());
  const std::size_t d = g.node_features.shape()[1];
  for (std::size_t k = 0; k < n; ++k) {
    p.nodes[perm[k]] = g.nodes[k];
    for (std::size_t j = 0; j < d; ++j) p.node_features[perm[k] * d + j] = g.node_features[k * d + j];
  }
  p.edge_features = Tensor(g.edge_features.shape());
  const std::size_t de = g.edge_features.shape()[1];
  for (std::size_t i = 0; i < e; ++i) {
    GraphEdge ed = g.edges[e - 1 - i];
    ed.src = perm[ed.src];
    ed.dst = perm[ed.dst];
    p.edges.push_back(ed);
    for (std::size_t j = 0; j < de; ++j) p.edge_features[i * de + j] = g.edge_features[(e - 1 - i) * de + j];
  }
  return p;
}

/// Two-conv CNN whose graph has 8 nodes.
inline ModelIR tiny_cnn() {
  ModelIR m;
  m.input_shape = {1, 6, 6};
  m.class_count = 2;
  m.operators = {conv_op("conv1", 1, 2, 3, 1, 1), conv_op("conv2", 2, 3, 3, 1, 1), linear_op("fc", 3, 2)};
  init_weights(m, 3);
  return m;
}

/// Fills a buffer with three-draw transitions from the agent's own
/// distribution on one graph, four transitions per episode.
inline void fill_on_policy(ReplayBuffer& buffer, const ActorCritic& ac, const std::shared_ptr<const DnnGraph>& g,
                           Rng& rng, double reward) {
  const Tensor f = act(encode(*g, ac.encoder), ac);
  std::size_t ep = 0;
  while (!buffer.full()) {
    Transition t;
    t.graph = g;
    t.probs = f.vec();
    t.counts.assign(f.size(), 0);
    double lp = 0.0;
    for (int d = 0; d < 3; ++d) {
      const std::size_t k = rng.categorical(f.data());
      ++t.counts[k];
      lp += std::log(f[k]);
    }
    t.log_prob = lp;
    t.reward = reward;
    t.episode = ep++ / 4;
    buffer.push(std::move(t));
  }
}

/// Two-pattern bandit: every transition is a one-step episode that draws a
/// single pattern from F on a fixed graph, paying 1 for pattern 0 and 0
/// otherwise. Returns F[0] after each PPO update.
inline std::vector<double> bandit_run(std::uint64_t seed, std::size_t updates, const DnnGraph& graph) {
  AgentConfig cfg;
  cfg.patterns = 2;
  ActorCritic ac = init_actor_critic(cfg, split_seed(seed, 0));
  PpoConfig ppo;
  PpoOptimizers opt(ppo);
  ReplayBuffer buffer(ppo.buffer_size);
  Rng rng(split_seed(seed, 1));
  auto shared = std::make_shared<const DnnGraph>(graph);
  std::vector<double> f0;
  std::size_t episode = 0;
  for (std::size_t u = 0; u < updates; ++u) {
    const Tensor f = act(encode(graph, ac.encoder), ac);
    while (!buffer.full()) {
      const std::size_t k = rng.categorical(f.data());
      Transition t;
      t.graph = shared;
      t.probs = f.vec();
      t.counts = {k == 0 ? 1u : 0u, k == 1 ? 1u : 0u};
      t.log_prob = std::log(f[k]);
      t.reward = k == 0 ? 1.0 : 0.0;
      t.episode = episode++;
      buffer.push(std::move(t));
    }
    ppo_update(buffer, ac, opt, ppo);
    f0.push_back(act(encode(graph, ac.encoder), ac)[0]);
  }
  return f0;
}

}  // namespace autosculpt::testing

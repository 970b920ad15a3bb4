#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "support.hpp"

using namespace autosculpt;
namespace tt = autosculpt::testing;

namespace {

DnnGraph tiny_graph(std::uint64_t seed = 5) {
  const ModelIR m = tt::tiny_cnn();
  const auto lib = default_library(3, 6);
  PatternAssignment a;
  a.indices = {{"conv1", {2}}, {"conv2", {4}}};
  return build_graph(m, a, lib, seed);
}

double at(const Tensor& t, std::size_t i, std::size_t j) { return t[i * t.shape()[1] + j]; }

/// Loop form of one attention round with ELU, summing over both edge
/// directions.
Tensor naive_round(const DnnGraph& g, const Tensor& h, const EncoderParams& p, std::size_t round) {
  const Tensor& ws = p.params[5 * round].value;
  const Tensor& wt = p.params[5 * round + 1].value;
  const Tensor& we = p.params[5 * round + 2].value;
  const Tensor& a = p.params[5 * round + 3].value;
  const Tensor& w = p.params[5 * round + 4].value;
  const std::size_t n = g.nodes.size(), in = h.shape()[1], hid = ws.shape()[1], de = we.shape()[0];
  struct Pair {
    std::size_t t, s, e;
  };
  std::vector<Pair> pairs;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    pairs.push_back({g.edges[e].dst, g.edges[e].src, e});
    pairs.push_back({g.edges[e].src, g.edges[e].dst, e});
  }
  std::vector<double> score(pairs.size());
  for (std::size_t q = 0; q < pairs.size(); ++q) {
    double s = 0.0;
    for (std::size_t c = 0; c < hid; ++c) {
      double z = 0.0;
      for (std::size_t k = 0; k < in; ++k) z += at(h, pairs[q].t, k) * at(ws, k, c) + at(h, pairs[q].s, k) * at(wt, k, c);
      for (std::size_t k = 0; k < de; ++k) z += at(g.edge_features, pairs[q].e, k) * at(we, k, c);
      z = z > 0 ? z : 0.2 * z;
      s += z * a[c];
    }
    score[q] = s;
  }
  Tensor out(Shape{n, hid});
  for (std::size_t v = 0; v < n; ++v) {
    double mx = -INFINITY, den = 0.0;
    for (std::size_t q = 0; q < pairs.size(); ++q)
      if (pairs[q].t == v) mx = std::max(mx, score[q]);
    for (std::size_t q = 0; q < pairs.size(); ++q)
      if (pairs[q].t == v) den += std::exp(score[q] - mx);
    for (std::size_t c = 0; c < hid; ++c) {
      double acc = 0.0;
      for (std::size_t q = 0; q < pairs.size(); ++q) {
        if (pairs[q].t != v) continue;
        double m = 0.0;
        for (std::size_t k = 0; k < in; ++k) m += at(h, pairs[q].s, k) * at(w, k, c);
        acc += std::exp(score[q] - mx) / den * m;
      }
      out[v * hid + c] = acc > 0 ? acc : std::expm1(acc);
    }
  }
  return out;
}

}  // namespace

TEST(Encoder, EmbeddingHasConfiguredWidth) {
  const EncoderParams p = init_encoder(EncoderConfig{}, 1);
  const Tensor g = encode(tiny_graph(), p);
  EXPECT_EQ(g.shape(), (Shape{256}));
  const ModelIR tr = demo_transformer(1);
  const auto lib = default_library(3, 6);
  EXPECT_EQ(encode(build_graph(tr, uniform_assignment(tr, 0), lib, 2), p).shape(), (Shape{256}));
}

TEST(Encoder, AttentionRowsSumToOne) {
  const EncoderParams p = init_encoder(EncoderConfig{}, 2);
  const ModelIR m = demo_cnn(1);
  const auto lib = default_library(3, 6);
  const DnnGraph g = build_graph(m, uniform_assignment(m, 3), lib, 4);
  EncoderTrace trace;
  encode(g, p, &trace);
  ASSERT_EQ(trace.alpha.size(), 2u);
  for (const Tensor& alpha : trace.alpha) {
    std::vector<double> total(g.node_count(), 0.0);
    for (std::size_t q = 0; q < alpha.size(); ++q) {
      EXPECT_GT(alpha[q], 0.0);
      total[trace.pairs.target[q]] += alpha[q];
    }
    for (double t : total) EXPECT_NEAR(t, 1.0, 1e-12);
  }
}

TEST(Encoder, RoundMatchesLoopOracle) {
  const EncoderParams p = init_encoder(EncoderConfig{}, 3);
  const DnnGraph g = tiny_graph();
  const Tensor h1 = gat_round(g, g.node_features, p, 0);
  EXPECT_LE(tt::relative_error(h1, naive_round(g, g.node_features, p, 0)), 1e-12);
  const Tensor h2 = gat_round(g, h1, p, 1);
  EXPECT_LE(tt::relative_error(h2, naive_round(g, h1, p, 1)), 1e-12);
  const Tensor pooled = pool_graph(h2).reshaped({1, 64});
  EXPECT_LE(tt::relative_error(encode(g, p), matmul(pooled, p.projection()).reshaped({256})), 1e-12);
}

TEST(Encoder, InvariantToNodeOrder) {
  const EncoderParams p = init_encoder(EncoderConfig{}, 4);
  const ModelIR m = demo_cnn(1);
  const auto lib = default_library(3, 6);
  const DnnGraph g = build_graph(m, uniform_assignment(m, 2), lib, 9);
  const Tensor base = encode(g, p);
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(g.node_count());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const Tensor other = encode(tt::permuted_graph(g, perm), p);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(other[i], base[i], 1e-10);
  }
}

TEST(Encoder, EndToEndGradientCheck) {
  const DnnGraph g = tiny_graph();
  ASSERT_LE(g.node_count(), 12u);
  for (Activation act : {Activation::elu, Activation::tanh}) {
    EncoderConfig c;
    c.activation = act;
    const EncoderParams p = init_encoder(c, 6);
    std::vector<Tensor> inputs;
    for (const auto& np : p.params) inputs.push_back(np.value);
    auto f = [&](Tape&, const std::vector<Var>& v) { return encode(g, v, c); };
    EXPECT_LE(tt::gradient_check(f, inputs, 8, 1e-6, 40), 1e-4);
  }
  EncoderConfig small;
  small.hidden = 4;
  small.out = 3;
  const EncoderParams p = init_encoder(small, 7);
  std::vector<Tensor> inputs;
  for (const auto& np : p.params) inputs.push_back(np.value);
  auto f = [&](Tape&, const std::vector<Var>& v) { return encode(g, v, small); };
  EXPECT_LE(tt::gradient_check(f, inputs, 9), 1e-4);
}

TEST(Encoder, SensitiveToOnePatternChange) {
  const EncoderParams p = init_encoder(EncoderConfig{}, 10);
  const ModelIR m = tt::tiny_cnn();
  const auto lib = default_library(3, 6);
  PatternAssignment a;
  a.indices = {{"conv1", {2}}, {"conv2", {4}}};
  const Tensor before = encode(build_graph(m, a, lib, 5), p);
  a.indices["conv2"] = {5};
  const DnnGraph changed = build_graph(m, a, lib, 5);
  EXPECT_GT(tt::relative_error(before, encode(changed, p)), 0.0);
  EXPECT_EQ(changed.node_features, build_graph(m, a, lib, 5).node_features);
}

TEST(Encoder, TapedMatchesEager) {
  const EncoderParams p = init_encoder(EncoderConfig{}, 5);
  const DnnGraph g = tiny_graph();
  Tape tape;
  std::vector<Var> vs;
  for (const auto& np : p.params) vs.push_back(tape.parameter(np.value));
  EXPECT_EQ(encode(g, vs, p.config).value(), encode(g, p));
}

TEST(Encoder, RejectsIsolatedNodesAndBadShapes) {
  DnnGraph g = tiny_graph();
  g.nodes.push_back(g.nodes.back());
  g.node_features = Tensor(Shape{g.nodes.size(), kNodeFeatureDim});
  const EncoderParams p = init_encoder(EncoderConfig{}, 1);
  EXPECT_THROW(encode(g, p), ValidationError);
  EncoderParams bad = p;
  bad.params[0].value = Tensor(Shape{3, 3});
  EXPECT_THROW(encode(tiny_graph(), bad), ShapeError);
  EXPECT_THROW(parse_activation("gelu"), ConfigError);
}

TEST(Encoder, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "autosculpt_encoder.ascp";
  const EncoderParams p = init_encoder(EncoderConfig{}, 11);
  save_encoder(p, path);
  const EncoderParams back = load_encoder(p.config, path);
  const DnnGraph g = tiny_graph();
  EXPECT_EQ(encode(g, back), encode(g, p));
  std::filesystem::remove(path);
}

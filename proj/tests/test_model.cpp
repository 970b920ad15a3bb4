#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace autosculpt;
namespace tt = autosculpt::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("autosculpt_model_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PatternAssignment random_assignment(const ModelIR& m, const PatternLibrary& lib, Rng& rng) {
  std::vector<double> f(lib.size(), 1.0 / static_cast<double>(lib.size()));
  return sample_assignment(f, m, rng).assignment;
}

}  // namespace

TEST(Flops, DenseMatchesCountingOracle) {
  const ModelIR cnn = demo_cnn(1);
  const ModelIR tr = demo_transformer(1);
  EXPECT_EQ(count_flops(cnn).dense_macs, tt::count_multiplies(cnn));
  EXPECT_EQ(count_flops(tr).dense_macs, tt::count_multiplies(tr));
  EXPECT_EQ(count_flops(cnn).dense_macs, 225856u);
  EXPECT_EQ(count_flops(cnn).flops_reduction, 0.0);
}

TEST(Flops, RandomTopologiesMatchCountingOracle) {
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    const ModelIR a = tt::random_cnn(rng, i % 2 == 0);
    const ModelIR b = tt::random_transformer(rng);
    EXPECT_EQ(count_flops(a).dense_macs, tt::count_multiplies(a));
    EXPECT_EQ(count_flops(b).dense_macs, tt::count_multiplies(b));
  }
}

TEST(Flops, EffectiveIsSumOfKeepScaledOperators) {
  Rng rng(8);
  for (const ModelIR& m : {demo_cnn(2), demo_transformer(2)}) {
    const auto lib = default_library(3, 6);
    for (int i = 0; i < 20; ++i) {
      const auto a = random_assignment(m, lib, rng);
      const MaskSet masks = realize_masks(m, a, lib);
      EXPECT_EQ(count_flops(m, &masks).effective_macs, tt::keep_scaled_macs(m, masks));
    }
  }
}

TEST(Forward, MaskEqualsPrunedModelBitwise) {
  Rng rng(11);
  for (const ModelIR& m : {demo_cnn(3), demo_transformer(3)}) {
    const auto lib = default_library(3, 6);
    Shape batch{4};
    batch.insert(batch.end(), m.input_shape.begin(), m.input_shape.end());
    for (int i = 0; i < 10; ++i) {
      const auto a = random_assignment(m, lib, rng);
      const MaskSet masks = realize_masks(m, a, lib);
      const ModelIR pruned = apply_pruning(m, masks);
      const Tensor x = tt::random_tensor(batch, rng);
      EXPECT_EQ(forward(m, x, &masks), forward(pruned, x));
    }
  }
}

TEST(Forward, TapedMatchesEagerAndGradientChecks) {
  ModelIR m;
  m.input_shape = {1, 5, 5};
  m.class_count = 3;
  m.operators = {conv_op("c1", 1, 2, 3, 2, 1), conv_op("c2", 2, 2, 3, 1, 1), conv_op("c3", 2, 3, 3, 1, 1),
                 linear_op("fc", 3, 3)};
  m.operators[1].residual_group = "r";
  m.operators[2].residual_group = "r";
  init_weights(m, 4);
  Rng rng(6);
  const Tensor x = tt::random_tensor({2, 1, 5, 5}, rng);
  {
    Tape tape;
    std::vector<Var> ps;
    for (const auto& w : m.weights) ps.push_back(tape.parameter(w.value));
    EXPECT_EQ(forward(tape, m, ps, x).value(), forward(m, x));
  }
  std::vector<Tensor> inputs;
  for (const auto& w : m.weights) inputs.push_back(w.value);
  const std::vector<int> labels{0, 2};
  auto f = [&](Tape& tape, const std::vector<Var>& v) { return cross_entropy(forward(tape, m, v, x), labels); };
  EXPECT_LE(tt::gradient_check(f, inputs, 3), 1e-4);

  const ModelIR tr = demo_transformer(1, 2, 3, 4);
  inputs.clear();
  for (const auto& w : tr.weights) inputs.push_back(w.value);
  const Tensor tx = tt::random_tensor({1, 3, 4}, rng);
  auto g = [&](Tape& tape, const std::vector<Var>& v) { return forward(tape, tr, v, tx); };
  EXPECT_LE(tt::gradient_check(g, inputs, 4), 1e-4);
}

TEST(Forward, RejectsWrongBatchShape) {
  const ModelIR m = demo_cnn(1);
  EXPECT_THROW(forward(m, Tensor(Shape{2, 1, 8, 8})), ShapeError);
}

TEST(Validate, CatchesBrokenTopologies) {
  ModelIR m = demo_cnn(1);
  m.operators[1].in_channels = 7;
  EXPECT_THROW(validate(m), ValidationError);
  ModelIR n = demo_cnn(1);
  n.weights.pop_back();
  EXPECT_THROW(validate(n), ValidationError);
  ModelIR t = demo_transformer(1);
  std::swap(t.operators[1], t.operators[2]);
  EXPECT_THROW(validate(t), ValidationError);
}

TEST(WeightsIo, RoundTripIsBitExact) {
  const ModelIR m = demo_transformer(9);
  const std::string bytes = encode_weights(m.weights);
  const ParamList back = decode_weights(bytes);
  ASSERT_EQ(back.size(), m.weights.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].name, m.weights[i].name);
    EXPECT_EQ(back[i].value, m.weights[i].value);
  }
  EXPECT_EQ(encode_weights(back), bytes);
}

TEST(WeightsIo, HeaderLayout) {
  const std::string bytes = encode_weights({{"w", Tensor(Shape{2}, {1.0, -2.0})}});
  // magic, version, name length, name, rank, dim, two doubles
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 1 + 4 + 4 + 16);
  EXPECT_EQ(bytes.substr(0, 4), "ASCP");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[12], 'w');
}

TEST(WeightsIo, CorruptInputsRaiseParseError) {
  const std::string good = encode_weights(demo_cnn(1).weights);
  EXPECT_THROW(decode_weights("XXXX" + good.substr(4)), ParseError);
  EXPECT_THROW(decode_weights(good.substr(0, good.size() - 3)), ParseError);
  std::string version = good;
  version[4] = 9;
  EXPECT_THROW(decode_weights(version), ParseError);
}

TEST(ModelIo, SaveLoadRoundTrip) {
  const auto dir = temp_dir("roundtrip");
  const ModelIR m = demo_cnn(12);
  save_model(m, dir / "m.json", dir / "m.ascp");
  const ModelIR back = load_model(dir / "m.json", dir / "m.ascp");
  EXPECT_EQ(back.operators, m.operators);
  EXPECT_EQ(back.input_shape, m.input_shape);
  ASSERT_EQ(back.weights.size(), m.weights.size());
  for (std::size_t i = 0; i < m.weights.size(); ++i) EXPECT_EQ(back.weights[i].value, m.weights[i].value);
  fs::remove_all(dir);
}

TEST(ModelIo, MalformedTopology) {
  EXPECT_THROW(topology_from_json(nlohmann::json::parse(R"({"version":1})")), ParseError);
  EXPECT_THROW(topology_from_json(nlohmann::json::parse(R"({"version":2,"input_shape":[1],"class_count":2,"operators":[]})")),
               ParseError);
}

TEST(Train, LrScheduleSteps) {
  Schedule s;
  s.lr = 1.0;
  s.decay = 0.1;
  s.milestones = {2, 4};
  EXPECT_EQ(lr_at(s, 0), 1.0);
  EXPECT_EQ(lr_at(s, 1), 1.0);
  EXPECT_NEAR(lr_at(s, 2), 0.1, 1e-15);
  EXPECT_NEAR(lr_at(s, 5), 0.01, 1e-15);
}

TEST(Train, FineTuneKeepsMaskedWeightsZero) {
  const ModelIR m = demo_cnn(2);
  const auto lib = default_library(3, 6);
  const auto a = uniform_assignment(m, 2);
  const MaskSet masks = realize_masks(m, a, lib);
  Rng rng(1);
  Split s{tt::random_tensor({16, 1, 16, 16}, rng), std::vector<int>(16)};
  for (std::size_t i = 0; i < 16; ++i) s.labels[i] = static_cast<int>(i % 4);
  Schedule sch;
  sch.epochs = 2;
  sch.batch_size = 8;
  const ModelIR tuned = fine_tune(m, &masks, s, sch, 3);
  for (const auto& [name, mask] : masks) {
    const Tensor& w = tuned.weight(name);
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (mask[j] != 0.0) continue;
      EXPECT_EQ(w[j], 0.0);
    }
  }
  EXPECT_NE(tuned.weight("conv1.weight"), apply_pruning(m, masks).weight("conv1.weight"));
}

TEST(Train, ConstraintCheck) {
  ConstraintSet c{0.5, 0.9, 50};
  EXPECT_TRUE(check_constraints({0.5, 0.9}, c));
  EXPECT_FALSE(check_constraints({0.49, 0.95}, c));
  EXPECT_FALSE(check_constraints({0.6, 0.89}, c));
}

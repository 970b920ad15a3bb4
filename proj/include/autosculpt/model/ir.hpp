#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "autosculpt/errors.hpp"
#include "autosculpt/numerics/kernels.hpp"
#include "autosculpt/numerics/rng.hpp"
#include "autosculpt/numerics/tensor.hpp"

namespace autosculpt {

enum class OpKind { conv2d, linear, attention, mlp_block };

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::linear: return "linear";
    case OpKind::attention: return "attention";
    case OpKind::mlp_block: return "mlp_block";
  }
  return "?";
}

inline OpKind parse_op_kind(const std::string& s) {
  if (s == "conv2d") return OpKind::conv2d;
  if (s == "linear") return OpKind::linear;
  if (s == "attention") return OpKind::attention;
  if (s == "mlp_block") return OpKind::mlp_block;
  throw ParseError("unknown operator kind '" + s + "'");
}

/// One operator of the target network. Only the shape fields relevant to
/// `kind` are meaningful; the rest stay zero.
struct OperatorSpec {
  std::string id;
  OpKind kind = OpKind::conv2d;
  // conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  // linear
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // attention (embed, head_dim) and mlp_block (embed, hidden)
  std::size_t embed = 0;
  std::size_t head_dim = 0;
  std::size_t hidden = 0;

  std::optional<std::string> residual_group;
  bool prunable = true;

  friend bool operator==(const OperatorSpec&, const OperatorSpec&) = default;
};

enum class Arch { cnn, transformer };

/// Target network: ordered bias-free operators plus their named weights.
/// CNN input_shape is [C,H,W]; Transformer input_shape is [T,F] (tokens x
/// raw token features).
struct ModelIR {
  std::vector<OperatorSpec> operators;
  ParamList weights;
  Shape input_shape;
  std::size_t class_count = 0;

  const Tensor& weight(const std::string& name) const {
    if (const auto* t = find_param(weights, name)) return *t;
    throw ValidationError("model has no weight named '" + name + "'");
  }
  Tensor& weight(const std::string& name) {
    if (auto* t = find_param(weights, name)) return *t;
    throw ValidationError("model has no weight named '" + name + "'");
  }
  const OperatorSpec& op(const std::string& id) const {
    for (const auto& o : operators)
      if (o.id == id) return o;
    throw ValidationError("model has no operator '" + id + "'");
  }
};

/// Names of the weight slots an operator kind owns, in canonical order.
inline std::vector<std::string> weight_slots(OpKind kind) {
  switch (kind) {
    case OpKind::conv2d:
    case OpKind::linear: return {"weight"};
    case OpKind::attention: return {"W_Q", "W_K", "W_V"};
    case OpKind::mlp_block: return {"W_1", "W_2"};
  }
  return {};
}

inline std::string weight_name(const OperatorSpec& op, const std::string& slot) { return op.id + "." + slot; }

inline Shape weight_shape(const OperatorSpec& op, const std::string& slot) {
  switch (op.kind) {
    case OpKind::conv2d: return {op.out_channels, op.in_channels, op.kernel, op.kernel};
    case OpKind::linear: return {op.in_features, op.out_features};
    case OpKind::attention: return {op.embed, op.head_dim};
    case OpKind::mlp_block: return slot == "W_1" ? Shape{op.embed, op.hidden} : Shape{op.hidden, op.embed};
  }
  return {};
}

inline Arch arch_of(const ModelIR& m) {
  bool conv = false, tr = false;
  for (const auto& op : m.operators) {
    conv = conv || op.kind == OpKind::conv2d;
    tr = tr || op.kind == OpKind::attention || op.kind == OpKind::mlp_block;
  }
  if (conv && tr) throw ValidationError("model mixes convolution and attention operators");
  if (!conv && !tr) throw ValidationError("model has neither convolution nor attention operators");
  return conv ? Arch::cnn : Arch::transformer;
}

/// Per-sample activation shapes around one operator, plus how many rows a
/// linear operator is applied to (tokens for token-wise projections).
struct LayerGeometry {
  Shape in;
  Shape out;
  std::size_t rows = 1;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace detail

/// Walk the operators, checking shape chaining, and return each operator's
/// input/output geometry.
inline std::vector<LayerGeometry> infer_geometry(const ModelIR& m) {
  using detail::require;
  const Arch arch = arch_of(m);
  std::vector<LayerGeometry> geo;
  geo.reserve(m.operators.size());
  require(m.class_count >= 2, "class_count must be at least 2");
  if (arch == Arch::cnn) {
    require(m.input_shape.size() == 3, "CNN input_shape must be [C,H,W], got " + shape_str(m.input_shape));
    Shape cur = m.input_shape;
    bool pooled = false;
    for (const auto& op : m.operators) {
      LayerGeometry g;
      g.in = cur;
      if (op.kind == OpKind::conv2d) {
        require(!pooled, "operator '" + op.id + "': convolution after the pooled head");
        require(op.kernel >= 1 && op.out_channels >= 1 && op.stride >= 1,
                "operator '" + op.id + "': invalid convolution parameters");
        require(op.in_channels == cur[0], "operator '" + op.id + "': expects " + std::to_string(op.in_channels) +
                                              " input channels, got " + std::to_string(cur[0]));
        require(op.kernel <= cur[1] + 2 * op.padding && op.kernel <= cur[2] + 2 * op.padding,
                "operator '" + op.id + "': kernel larger than padded input");
        cur = {op.out_channels, kernels::conv_out_dim(cur[1], op.kernel, op.stride, op.padding),
               kernels::conv_out_dim(cur[2], op.kernel, op.stride, op.padding)};
      } else if (op.kind == OpKind::linear) {
        if (!pooled) {
          cur = {cur[0]};
          g.in = cur;
          pooled = true;
        }
        require(op.in_features == cur[0], "operator '" + op.id + "': expects " + std::to_string(op.in_features) +
                                              " features, got " + std::to_string(cur[0]));
        cur = {op.out_features};
      }
      g.out = cur;
      geo.push_back(g);
    }
    require(pooled && cur.size() == 1 && cur[0] == m.class_count,
            "CNN must end with a linear head producing class_count logits");
  } else {
    require(m.input_shape.size() == 2, "Transformer input_shape must be [T,F], got " + shape_str(m.input_shape));
    const std::size_t T = m.input_shape[0];
    Shape cur = m.input_shape;
    bool pooled = false;
    for (std::size_t i = 0; i < m.operators.size(); ++i) {
      const auto& op = m.operators[i];
      LayerGeometry g;
      g.in = cur;
      if (op.kind == OpKind::linear) {
        if (i == 0) {
          require(op.in_features == cur[1], "embedding '" + op.id + "' expects " +
                                                std::to_string(op.in_features) + " token features");
          cur = {T, op.out_features};
          g.rows = T;
        } else {
          if (!pooled) {
            cur = {cur[1]};
            g.in = cur;
            pooled = true;
          }
          require(op.in_features == cur[0], "operator '" + op.id + "': feature mismatch");
          cur = {op.out_features};
        }
      } else {
        require(!pooled && cur.size() == 2, "operator '" + op.id + "': encoder block after pooled head");
        require(op.embed == cur[1], "operator '" + op.id + "': embed " + std::to_string(op.embed) +
                                        " does not match stream width " + std::to_string(cur[1]));
        if (op.kind == OpKind::attention) {
          require(op.head_dim >= 1 && op.head_dim <= op.embed, "operator '" + op.id + "': head_dim out of range");
          require(i + 1 < m.operators.size() && m.operators[i + 1].kind == OpKind::mlp_block,
                  "attention '" + op.id + "' must be followed by an mlp_block");
        } else {
          require(op.hidden >= 1, "operator '" + op.id + "': hidden size must be positive");
          require(i > 0 && m.operators[i - 1].kind == OpKind::attention,
                  "mlp_block '" + op.id + "' must follow an attention operator");
        }
        g.rows = T;
      }
      g.out = cur;
      geo.push_back(g);
    }
    require(m.operators.front().kind == OpKind::linear, "Transformer must start with a linear token embedding");
    require(pooled && cur.size() == 1 && cur[0] == m.class_count,
            "Transformer must end with a linear head producing class_count logits");
  }
  return geo;
}

/// A residual group: consecutive operators bridged by one identity skip from
/// the first member's input to the last member's output.
struct ResidualSpan {
  std::string group;
  std::size_t first = 0;  // operator index
  std::size_t last = 0;
};

inline std::vector<ResidualSpan> residual_spans(const ModelIR& m) {
  std::vector<ResidualSpan> spans;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < m.operators.size(); ++i) {
    const auto& rg = m.operators[i].residual_group;
    if (!rg) continue;
    auto it = index.find(*rg);
    if (it == index.end()) {
      index[*rg] = spans.size();
      spans.push_back({*rg, i, i});
    } else {
      auto& s = spans[it->second];
      if (s.last + 1 != i) throw ValidationError("residual group '" + *rg + "' members are not consecutive");
      s.last = i;
    }
  }
  return spans;
}

/// Full structural validation: unique ids, shape chaining, residual groups,
/// and one correctly shaped weight per slot (no extras).
inline std::vector<LayerGeometry> validate(const ModelIR& m) {
  using detail::require;
  require(!m.operators.empty(), "model has no operators");
  std::set<std::string> ids;
  for (const auto& op : m.operators) {
    require(!op.id.empty(), "operator with empty id");
    require(ids.insert(op.id).second, "duplicate operator id '" + op.id + "'");
  }
  auto geo = infer_geometry(m);
  const Arch arch = arch_of(m);
  for (const auto& span : residual_spans(m)) {
    require(arch == Arch::cnn, "residual groups are only declared on CNN models (encoder skips are implicit)");
    require(span.last > span.first, "residual group '" + span.group + "' needs at least two operators");
    const auto& first = m.operators[span.first];
    for (std::size_t i = span.first; i <= span.last; ++i) {
      const auto& op = m.operators[i];
      require(op.kind == OpKind::conv2d, "residual group '" + span.group + "' contains non-convolution '" + op.id + "'");
      require(op.kernel == first.kernel, "residual group '" + span.group + "' members have different kernel shapes");
      require(op.prunable == first.prunable, "residual group '" + span.group + "' mixes prunable and fixed operators");
    }
    const Shape& in = geo[span.first].in;
    const Shape& out = geo[span.last].out;
    require(in[1] == out[1] && in[2] == out[2] && in[0] <= out[0],
            "residual group '" + span.group + "' skip " + shape_str(in) + " -> " + shape_str(out) +
                " needs equal spatial size and non-decreasing channels");
  }
  std::size_t expected = 0;
  for (const auto& op : m.operators) {
    for (const auto& slot : weight_slots(op.kind)) {
      ++expected;
      const auto name = weight_name(op, slot);
      const Tensor* w = find_param(m.weights, name);
      require(w != nullptr, "missing weight '" + name + "'");
      require(w->shape() == weight_shape(op, slot), "weight '" + name + "' has shape " + shape_str(w->shape()) +
                                                         ", topology expects " + shape_str(weight_shape(op, slot)));
    }
  }
  require(m.weights.size() == expected, "model carries weights not declared by its topology");
  return geo;
}

/// Fill every weight slot with U(-b, b), b = sqrt(6 / fan_in) (He-uniform for
/// the ReLU stacks; attention projections use b = 1/sqrt(fan_in)).
inline void init_weights(ModelIR& m, std::uint64_t seed) {
  m.weights.clear();
  std::uint64_t stream = 0;
  for (const auto& op : m.operators) {
    for (const auto& slot : weight_slots(op.kind)) {
      const Shape shape = weight_shape(op, slot);
      std::size_t fan_in = shape[0];
      if (op.kind == OpKind::conv2d) fan_in = op.in_channels * op.kernel * op.kernel;
      const double bound = op.kind == OpKind::attention ? 1.0 / std::sqrt(static_cast<double>(fan_in))
                                                        : std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng(split_seed(seed, stream++));
      Tensor w(shape);
      for (auto& v : w.data()) v = rng.uniform(-bound, bound);
      m.weights.push_back({weight_name(op, slot), std::move(w)});
    }
  }
}

inline OperatorSpec conv_op(std::string id, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                            std::size_t pad) {
  OperatorSpec op;
  op.id = std::move(id);
  op.kind = OpKind::conv2d;
  op.in_channels = in;
  op.out_channels = out;
  op.kernel = k;
  op.stride = stride;
  op.padding = pad;
  return op;
}

inline OperatorSpec linear_op(std::string id, std::size_t in, std::size_t out, bool prunable = false) {
  OperatorSpec op;
  op.id = std::move(id);
  op.kind = OpKind::linear;
  op.in_features = in;
  op.out_features = out;
  op.prunable = prunable;
  return op;
}

inline OperatorSpec attention_op(std::string id, std::size_t d, std::size_t dk) {
  OperatorSpec op;
  op.id = std::move(id);
  op.kind = OpKind::attention;
  op.embed = d;
  op.head_dim = dk;
  return op;
}

inline OperatorSpec mlp_op(std::string id, std::size_t d, std::size_t hidden) {
  OperatorSpec op;
  op.id = std::move(id);
  op.kind = OpKind::mlp_block;
  op.embed = d;
  op.hidden = hidden;
  return op;
}

/// Desk-scale CNN: three 3x3 convolutions (8/16/16 channels) on [1,16,16]
/// inputs, conv2+conv3 bridged by one residual skip, global average pooling,
/// and a non-prunable linear head.
inline ModelIR demo_cnn(std::uint64_t seed, std::size_t classes = 4, std::size_t image = 16,
                        std::size_t channels = 1) {
  ModelIR m;
  m.input_shape = {channels, image, image};
  m.class_count = classes;
  m.operators.push_back(conv_op("conv1", channels, 8, 3, 2, 1));
  m.operators.push_back(conv_op("conv2", 8, 16, 3, 1, 1));
  m.operators.push_back(conv_op("conv3", 16, 16, 3, 1, 1));
  m.operators[1].residual_group = "res1";
  m.operators[2].residual_group = "res1";
  m.operators.push_back(linear_op("fc", 16, classes));
  init_weights(m, seed);
  validate(m);
  return m;
}

/// Desk-scale Transformer encoder stack: image rows as T=16 tokens, a
/// non-prunable token embedding to d=32, two encoders (d_k=16, MLP hidden 64),
/// mean pooling over tokens, and a non-prunable linear head.
inline ModelIR demo_transformer(std::uint64_t seed, std::size_t classes = 4, std::size_t tokens = 16,
                                std::size_t token_features = 16) {
  ModelIR m;
  m.input_shape = {tokens, token_features};
  m.class_count = classes;
  m.operators.push_back(linear_op("embed", token_features, 32));
  for (int l = 0; l < 2; ++l) {
    m.operators.push_back(attention_op("enc" + std::to_string(l) + ".attn", 32, 16));
    m.operators.push_back(mlp_op("enc" + std::to_string(l) + ".mlp", 32, 64));
  }
  m.operators.push_back(linear_op("head", 32, classes));
  init_weights(m, seed);
  validate(m);
  return m;
}

}  // namespace autosculpt

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "autosculpt/model/ir.hpp"

namespace autosculpt {

// ---------------------------------------------------------------------------
// ASCP weight container: "ASCP" magic, u32 version, then repeated records of
// u32 name length, name bytes, u32 ndim, u32 dims[ndim], f64 payload.
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kAscpMagic[4] = {'A', 'S', 'C', 'P'};
inline constexpr std::uint32_t kAscpVersion = 1;
inline constexpr int kTopologyVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("weight file truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

}  // namespace detail

inline std::string encode_weights(const ParamList& params) {
  std::string out(kAscpMagic, 4);
  detail::put_le<std::uint32_t>(out, kAscpVersion);
  for (const auto& p : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) detail::put_le<double>(out, v);
  }
  return out;
}

inline ParamList decode_weights(const std::string& bytes) {
  detail::ByteReader in(bytes);
  if (in.take(4, "magic") != std::string(kAscpMagic, 4)) throw ParseError("bad weight file magic (expected ASCP)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kAscpVersion) throw ParseError("unsupported weight file version " + std::to_string(version));
  ParamList params;
  while (!in.done()) {
    const auto len = in.get<std::uint32_t>("name length");
    std::string name = in.take(len, "name");
    const auto ndim = in.get<std::uint32_t>("rank");
    if (ndim == 0 || ndim > 8) throw ParseError("tensor '" + name + "' has invalid rank " + std::to_string(ndim));
    Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const auto d = in.get<std::uint32_t>("dims");
      if (d == 0) throw ParseError("tensor '" + name + "' has a zero dimension");
      shape.push_back(d);
    }
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = in.get<double>("payload");
    params.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return params;
}

inline void save_weights(const ParamList& params, const std::filesystem::path& path) {
  detail::write_file(path, encode_weights(params));
}

inline ParamList load_weights(const std::filesystem::path& path) { return decode_weights(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Topology JSON: {version, input_shape, class_count, operators:[{id, kind,
// params, residual_group?, prunable}]}
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json topology_to_json(const ModelIR& m) {
  nlohmann::ordered_json j;
  j["version"] = kTopologyVersion;
  j["input_shape"] = m.input_shape;
  j["class_count"] = m.class_count;
  auto ops = nlohmann::ordered_json::array();
  for (const auto& op : m.operators) {
    nlohmann::ordered_json o;
    o["id"] = op.id;
    o["kind"] = to_string(op.kind);
    nlohmann::ordered_json p;
    switch (op.kind) {
      case OpKind::conv2d:
        p["in_channels"] = op.in_channels;
        p["out_channels"] = op.out_channels;
        p["kernel"] = op.kernel;
        p["stride"] = op.stride;
        p["padding"] = op.padding;
        break;
      case OpKind::linear:
        p["in"] = op.in_features;
        p["out"] = op.out_features;
        break;
      case OpKind::attention:
        p["embed"] = op.embed;
        p["head_dim"] = op.head_dim;
        break;
      case OpKind::mlp_block:
        p["embed"] = op.embed;
        p["hidden"] = op.hidden;
        break;
    }
    o["params"] = p;
    if (op.residual_group) o["residual_group"] = *op.residual_group;
    o["prunable"] = op.prunable;
    ops.push_back(o);
  }
  j["operators"] = ops;
  return j;
}

/// Parses topology only; the returned model has no weights.
inline ModelIR topology_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kTopologyVersion) {
      throw ParseError("unsupported topology version " + j.at("version").dump());
    }
    ModelIR m;
    m.input_shape = j.at("input_shape").get<Shape>();
    m.class_count = j.at("class_count").get<std::size_t>();
    for (const auto& o : j.at("operators")) {
      OperatorSpec op;
      op.id = o.at("id").get<std::string>();
      op.kind = parse_op_kind(o.at("kind").get<std::string>());
      const auto& p = o.at("params");
      switch (op.kind) {
        case OpKind::conv2d:
          op.in_channels = p.at("in_channels").get<std::size_t>();
          op.out_channels = p.at("out_channels").get<std::size_t>();
          op.kernel = p.at("kernel").get<std::size_t>();
          op.stride = p.value("stride", std::size_t{1});
          op.padding = p.value("padding", std::size_t{0});
          break;
        case OpKind::linear:
          op.in_features = p.at("in").get<std::size_t>();
          op.out_features = p.at("out").get<std::size_t>();
          break;
        case OpKind::attention:
          op.embed = p.at("embed").get<std::size_t>();
          op.head_dim = p.at("head_dim").get<std::size_t>();
          break;
        case OpKind::mlp_block:
          op.embed = p.at("embed").get<std::size_t>();
          op.hidden = p.at("hidden").get<std::size_t>();
          break;
      }
      if (o.contains("residual_group")) op.residual_group = o.at("residual_group").get<std::string>();
      op.prunable = o.value("prunable", true);
      m.operators.push_back(std::move(op));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed topology: ") + e.what());
  }
}

inline void save_model(const ModelIR& m, const std::filesystem::path& topology_path,
                       const std::filesystem::path& weights_path) {
  validate(m);
  detail::write_file(topology_path, topology_to_json(m).dump(2) + "\n");
  save_weights(m.weights, weights_path);
}

/// Loads and validates; weights are reordered to topology order.
inline ModelIR load_model(const std::filesystem::path& topology_path, const std::filesystem::path& weights_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(topology_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("topology '" + topology_path.string() + "' is not valid JSON: " + e.what());
  }
  ModelIR m = topology_from_json(j);
  ParamList loaded = load_weights(weights_path);
  for (const auto& op : m.operators) {
    for (const auto& slot : weight_slots(op.kind)) {
      const auto name = weight_name(op, slot);
      const Tensor* w = find_param(loaded, name);
      if (!w) throw ValidationError("weight file lacks '" + name + "'");
      m.weights.push_back({name, *w});
    }
  }
  if (m.weights.size() != loaded.size()) throw ValidationError("weight file has tensors not named by the topology");
  validate(m);
  return m;
}

}  // namespace autosculpt

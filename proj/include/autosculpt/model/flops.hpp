#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autosculpt/model/forward.hpp"
#include "autosculpt/model/ir.hpp"

namespace autosculpt {

struct OperatorFlops {
  std::string id;
  std::uint64_t dense_macs = 0;
  double effective_macs = 0.0;
  double keep_fraction = 1.0;
};

struct FlopsReport {
  std::uint64_t dense_macs = 0;
  double effective_macs = 0.0;
  double flops_reduction = 0.0;
  std::vector<OperatorFlops> per_operator;
};

/// Dense per-sample MACs of one operator:
///   conv      n*c*k^2*H'*W'
///   linear    in*out per row it is applied to
///   attention 3*T*d*d_k (projections) + 2*T^2*d_k (scores, value mix)
///   mlp_block 2*T*d*hidden
inline std::uint64_t dense_macs(const OperatorSpec& op, const LayerGeometry& g) {
  using u64 = std::uint64_t;
  switch (op.kind) {
    case OpKind::conv2d:
      return u64(op.out_channels) * op.in_channels * op.kernel * op.kernel * g.out[1] * g.out[2];
    case OpKind::linear: return u64(op.in_features) * op.out_features * g.rows;
    case OpKind::attention: {
      const u64 t = g.rows;
      return 3 * t * op.embed * op.head_dim + 2 * t * t * op.head_dim;
    }
    case OpKind::mlp_block: return 2 * u64(g.rows) * op.embed * op.hidden;
  }
  return 0;
}

/// Dense and effective MACs. An operator's effective MACs are its dense MACs
/// scaled by the kept fraction of its realized masks (kept entries over total
/// entries, pooled across the operator's weight slots).
inline FlopsReport count_flops(const ModelIR& m, const MaskSet* masks = nullptr) {
  const auto geo = validate(m);
  if (masks) check_masks(m, *masks);
  FlopsReport r;
  for (std::size_t i = 0; i < m.operators.size(); ++i) {
    const auto& op = m.operators[i];
    OperatorFlops f;
    f.id = op.id;
    f.dense_macs = dense_macs(op, geo[i]);
    std::uint64_t kept = 0, total = 0;
    for (const auto& slot : weight_slots(op.kind)) {
      const auto name = weight_name(op, slot);
      const std::uint64_t n = shape_numel(weight_shape(op, slot));
      total += n;
      const Tensor* mask = nullptr;
      if (masks) {
        if (auto it = masks->find(name); it != masks->end()) mask = &it->second;
      }
      if (!mask) {
        kept += n;
      } else {
        for (double v : mask->data()) kept += v != 0.0 ? 1 : 0;
      }
    }
    f.keep_fraction = static_cast<double>(kept) / static_cast<double>(total);
    f.effective_macs = static_cast<double>(f.dense_macs) * static_cast<double>(kept) / static_cast<double>(total);
    r.dense_macs += f.dense_macs;
    r.effective_macs += f.effective_macs;
    r.per_operator.push_back(f);
  }
  r.flops_reduction = r.dense_macs == 0 ? 0.0 : 1.0 - r.effective_macs / static_cast<double>(r.dense_macs);
  return r;
}

}  // namespace autosculpt

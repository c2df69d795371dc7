#pragma once

#include <cstddef>
#include <string>

#include "richunet/autodiff.hpp"
#include "richunet/params.hpp"

namespace richunet {

/// Multi-scale adaptive gating fusion of two same-shape feature maps.
///
/// Channel gate:  W_g = sigmoid(W_2 ReLU(W_1 GAP(x1 + x2)))   (1x1 convs, no bias)
/// Spatial gate:  W_s = sigmoid(BN(DWConv3x3(x1 + x2)))
/// Output:        x1 * W_g + x2 * W_s
struct MsagfParams {
  Tensor w_1;        ///< [C/r, C, 1, 1]
  Tensor w_2;        ///< [C, C/r, 1, 1]
  Tensor dw_kernel;  ///< [C, 1, 3, 3]
  std::size_t reduction = 4;
  BatchNormState bn;

  static MsagfParams create(std::size_t channels, std::size_t reduction, Rng& rng);
  static MsagfParams zeros(std::size_t channels, std::size_t reduction);

  std::size_t channels() const { return dw_kernel.rank() == 4 ? dw_kernel.dim(0) : 0; }
  void validate() const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Channel attention [B,C,1,1]; depends on x1 + x2 only through channel means.
Var global_attention(Var x1, Var x2, const MsagfParams& p);
/// Spatial attention [B,C,H,W], values in (0,1).
Var spatial_attention(Var x1, Var x2, MsagfParams& p);
/// x1 * channel_gate (broadcast over H,W) + x2 * spatial_gate.
Var gated_fusion(Var x1, Var x2, Var channel_gate, Var spatial_gate);
Var msagf_fuse(Var x1, Var x2, MsagfParams& p);

}  // namespace richunet

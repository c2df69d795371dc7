#pragma once

#include <cstddef>
#include <string>

#include "richunet/autodiff.hpp"
#include "richunet/params.hpp"

namespace richunet {

/// Recurrent gate + depthwise conv block over a feature map.
///
/// The recurrence is the two-gate product
///   H_t = sigmoid(X_t W_f + H_{t-1} U_f + b_f) * tanh(X_t W_c + H_{t-1} U_c + b_c)
/// with H_0 = 0 and no separate cell state, run over the row-major token
/// order of the spatial grid.
struct FusionLayerParams {
  Tensor w_f, u_f, b_f;
  Tensor w_c, u_c, b_c;
  Tensor w_g, b_g;
  /// [C,1,3,3]. No bias: batch norm follows and would cancel it.
  Tensor dw_kernel;
  BatchNormState bn;

  static FusionLayerParams create(std::size_t channels, Rng& rng);
  /// All weights, biases and beta zero; gamma one. The block is then the identity.
  static FusionLayerParams zeros(std::size_t channels);

  std::size_t channels() const { return b_f.size(); }
  void validate() const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// [B,N,C] -> hidden states [B,N,C].
Var lstm_scan(Var tokens, const FusionLayerParams& p);
/// G = sigmoid(H W_g + b_g); returns G * H.
Var temporal_gate(Var hidden, const FusionLayerParams& p);
/// Z = ReLU(BN(DWConv(gate(scan(tokens(x)))))) + x, shape preserving.
Var fusion_forward(Var x, FusionLayerParams& p);

}  // namespace richunet

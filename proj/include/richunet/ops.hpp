#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "richunet/autodiff.hpp"
#include "richunet/rng.hpp"
#include "richunet/tensor.hpp"

namespace richunet {

// Elementwise ops require identical shapes; broadcasting is limited to the
// explicit add_bias / mul_channel helpers below.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var x) { return scale(x, s); }
inline Var operator*(Var x, double s) { return scale(x, s); }

/// Sum of all elements, as a rank-0 tensor.
Var sum(Var x);
Var mean(Var x);

Var reshape(Var x, Shape shape);
/// out.shape[i] == x.shape[axes[i]].
Var permute(Var x, std::vector<std::size_t> axes);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);

/// Batched matrix product [..,M,P] x [..,P,Q]. Leading batch dims must be
/// equal, or one operand must be a plain matrix shared across the batch.
Var matmul(Var a, Var b);
/// x[..,C] + bias[C].
Var add_bias(Var x, Var bias);
/// x[B,C,H,W] * gate[B,C,1,1], gate broadcast over the spatial grid.
Var mul_channel(Var x, Var gate);

/// Token t of a sequence x[B,N,C] as [B,C].
Var select_token(Var x, std::size_t t);
/// Inverse of select_token: N tensors [B,C] -> [B,N,C].
Var stack_tokens(std::span<const Var> tokens);

/// Cross-correlation. x[B,Cin,H,W], weight[Cout,Cin,kh,kw], bias[Cout].
Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride = 1, std::size_t padding = 0);
/// One filter per channel. x[B,C,H,W], weight[C,1,kh,kw], bias[C].
Var depthwise_conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride = 1,
                     std::size_t padding = 0);
/// Window maxima; gradient goes to the first maximum in row-major order.
Var maxpool2d(Var x, std::size_t kernel = 2, std::size_t stride = 2);
Var nearest_upsample2x(Var x);
/// Per-channel spatial mean, [B,C,H,W] -> [B,C,1,1].
Var global_avg_pool(Var x);

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState create(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

/// Batch normalisation over (B,H,W) per channel. In training mode the batch
/// statistics are used and the running statistics updated; in evaluation
/// mode the running statistics are used. gamma/beta are registered on the
/// tape as parameters.
Var batchnorm2d(Var x, BatchNormState& state);

/// Softmax over the last axis restricted to positions where mask != 0.
/// Masked positions are exactly zero. Every row needs an allowed entry.
Var masked_softmax(Var logits, const Tensor& mask);
Var log_softmax(Var logits);

/// Inverted dropout; identity in evaluation mode or at rate 0.
Var dropout(Var x, double rate, Rng& rng);

}  // namespace richunet

namespace richunet {

/// [B,C,H,W] -> [B,H*W,C], tokens in row-major spatial order.
Var to_tokens(Var x);
/// [B,H*W,C] -> [B,C,H,W].
Var from_tokens(Var tokens, std::size_t height, std::size_t width);

}  // namespace richunet

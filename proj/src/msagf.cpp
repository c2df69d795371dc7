#include "richunet/msagf.hpp"

#include "richunet/error.hpp"
#include "richunet/ops.hpp"

namespace richunet {

namespace {

void require_pair(const char* op, Var x1, Var x2, std::size_t channels) {
  if (x1.shape() != x2.shape()) {
    throw ShapeError(std::string(op) + ": input shapes differ " + to_string(x1.shape()) + " vs " +
                     to_string(x2.shape()));
  }
  if (x1.shape().size() != 4 || x1.shape()[1] != channels) {
    throw ShapeError(std::string(op) + ": expected [B," + std::to_string(channels) + ",H,W], got " +
                     to_string(x1.shape()));
  }
}

}  // namespace

MsagfParams MsagfParams::create(std::size_t channels, std::size_t reduction, Rng& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("msagf: reduction " + std::to_string(reduction) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  const std::size_t hidden = channels / reduction;
  MsagfParams p;
  p.w_1 = he_uniform({hidden, channels, 1, 1}, channels, rng);
  p.w_2 = he_uniform({channels, hidden, 1, 1}, hidden, rng);
  p.dw_kernel = he_uniform({channels, 1, 3, 3}, 9, rng);
  p.reduction = reduction;
  p.bn = BatchNormState::create(channels);
  return p;
}

MsagfParams MsagfParams::zeros(std::size_t channels, std::size_t reduction) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("msagf: reduction " + std::to_string(reduction) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  MsagfParams p;
  p.w_1 = Tensor::zeros({channels / reduction, channels, 1, 1});
  p.w_2 = Tensor::zeros({channels, channels / reduction, 1, 1});
  p.dw_kernel = Tensor::zeros({channels, 1, 3, 3});
  p.reduction = reduction;
  p.bn = BatchNormState::create(channels);
  return p;
}

void MsagfParams::validate() const {
  const std::size_t c = channels();
  if (reduction == 0 || c == 0 || c % reduction != 0) throw ConfigError("msagf: reduction must divide channels");
  const std::size_t hidden = c / reduction;
  if (w_1.shape() != Shape{hidden, c, 1, 1}) throw ConfigError("msagf: w_1 must be [C/r,C,1,1]");
  if (w_2.shape() != Shape{c, hidden, 1, 1}) throw ConfigError("msagf: w_2 must be [C,C/r,1,1]");
  if (dw_kernel.shape() != Shape{c, 1, 3, 3}) throw ConfigError("msagf: dw_kernel must be [C,1,3,3]");
  if (bn.channels() != c) throw ConfigError("msagf: batch norm channel count mismatch");
}

void MsagfParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w_1", w_1, true);
  fn(prefix + ".w_2", w_2, true);
  fn(prefix + ".dw_kernel", dw_kernel, true);
  visit_batchnorm(prefix + ".bn", bn, fn);
}

Var global_attention(Var x1, Var x2, const MsagfParams& p) {
  p.validate();
  require_pair("global_attention", x1, x2, p.channels());
  Tape& tape = *x1.tape;
  Var pooled = global_avg_pool(add(x1, x2));
  Var squeezed = relu(conv2d(pooled, tape.parameter(p.w_1), std::nullopt));
  return sigmoid(conv2d(squeezed, tape.parameter(p.w_2), std::nullopt));
}

Var spatial_attention(Var x1, Var x2, MsagfParams& p) {
  p.validate();
  require_pair("spatial_attention", x1, x2, p.channels());
  Tape& tape = *x1.tape;
  Var conv = depthwise_conv2d(add(x1, x2), tape.parameter(p.dw_kernel), std::nullopt, 1, 1);
  return sigmoid(batchnorm2d(conv, p.bn));
}

Var gated_fusion(Var x1, Var x2, Var channel_gate, Var spatial_gate) {
  if (x1.shape() != x2.shape() || spatial_gate.shape() != x1.shape()) {
    throw ShapeError("gated_fusion: shapes " + to_string(x1.shape()) + ", " + to_string(x2.shape()) + ", " +
                     to_string(spatial_gate.shape()) + " must agree");
  }
  return add(mul_channel(x1, channel_gate), mul(x2, spatial_gate));
}

Var msagf_fuse(Var x1, Var x2, MsagfParams& p) {
  Var channel_gate = global_attention(x1, x2, p);
  Var spatial_gate = spatial_attention(x1, x2, p);
  return gated_fusion(x1, x2, channel_gate, spatial_gate);
}

}  // namespace richunet

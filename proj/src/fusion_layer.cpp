#include "richunet/fusion_layer.hpp"

#include <vector>

#include "richunet/error.hpp"
#include "richunet/ops.hpp"

namespace richunet {

FusionLayerParams FusionLayerParams::create(std::size_t channels, Rng& rng) {
  FusionLayerParams p;
  p.w_f = he_uniform({channels, channels}, channels, rng);
  p.u_f = orthogonal(channels, rng);
  p.b_f = Tensor::zeros({channels});
  p.w_c = he_uniform({channels, channels}, channels, rng);
  p.u_c = orthogonal(channels, rng);
  p.b_c = Tensor::zeros({channels});
  p.w_g = he_uniform({channels, channels}, channels, rng);
  p.b_g = Tensor::zeros({channels});
  p.dw_kernel = he_uniform({channels, 1, 3, 3}, 9, rng);
  p.bn = BatchNormState::create(channels);
  return p;
}

FusionLayerParams FusionLayerParams::zeros(std::size_t channels) {
  FusionLayerParams p;
  p.w_f = p.u_f = p.w_c = p.u_c = p.w_g = Tensor::zeros({channels, channels});
  p.b_f = p.b_c = p.b_g = Tensor::zeros({channels});
  p.dw_kernel = Tensor::zeros({channels, 1, 3, 3});
  p.bn = BatchNormState::create(channels);
  return p;
}

void FusionLayerParams::validate() const {
  const std::size_t c = channels();
  for (const Tensor* w : {&w_f, &u_f, &w_c, &u_c, &w_g}) {
    if (w->shape() != Shape{c, c}) throw ConfigError("fusion_layer: weight matrices must all be CxC");
  }
  for (const Tensor* b : {&b_f, &b_c, &b_g}) {
    if (b->shape() != Shape{c}) throw ConfigError("fusion_layer: bias vectors must have C entries");
  }
  if (dw_kernel.shape() != Shape{c, 1, 3, 3}) throw ConfigError("fusion_layer: dw_kernel must be [C,1,3,3]");
  if (bn.channels() != c) throw ConfigError("fusion_layer: batch norm channel count mismatch");
}

void FusionLayerParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w_f", w_f, true);
  fn(prefix + ".u_f", u_f, true);
  fn(prefix + ".b_f", b_f, true);
  fn(prefix + ".w_c", w_c, true);
  fn(prefix + ".u_c", u_c, true);
  fn(prefix + ".b_c", b_c, true);
  fn(prefix + ".w_g", w_g, true);
  fn(prefix + ".b_g", b_g, true);
  fn(prefix + ".dw_kernel", dw_kernel, true);
  visit_batchnorm(prefix + ".bn", bn, fn);
}

Var lstm_scan(Var tokens, const FusionLayerParams& p) {
  p.validate();
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[2] != p.channels() || s[1] == 0) {
    throw ShapeError("lstm_scan: expected [B,N," + std::to_string(p.channels()) + "] with N >= 1, got " +
                     to_string(s));
  }
  Tape& tape = *tokens.tape;
  const std::size_t steps = s[1];
  // Input contributions for every step at once; only the recurrent part is sequential.
  Var forget_in = add_bias(matmul(tokens, tape.parameter(p.w_f)), tape.parameter(p.b_f));
  Var cand_in = add_bias(matmul(tokens, tape.parameter(p.w_c)), tape.parameter(p.b_c));
  Var u_f = tape.parameter(p.u_f);
  Var u_c = tape.parameter(p.u_c);

  std::vector<Var> hidden;
  hidden.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var f_pre = select_token(forget_in, t);
    Var c_pre = select_token(cand_in, t);
    if (t > 0) {
      f_pre = add(f_pre, matmul(hidden.back(), u_f));
      c_pre = add(c_pre, matmul(hidden.back(), u_c));
    }
    hidden.push_back(mul(sigmoid(f_pre), tanh(c_pre)));
  }
  return stack_tokens(hidden);
}

Var temporal_gate(Var hidden, const FusionLayerParams& p) {
  Tape& tape = *hidden.tape;
  Var gate = sigmoid(add_bias(matmul(hidden, tape.parameter(p.w_g)), tape.parameter(p.b_g)));
  return mul(gate, hidden);
}

Var fusion_forward(Var x, FusionLayerParams& p) {
  const Shape s = x.shape();
  if (s.size() != 4 || s[1] != p.channels() || s[2] == 0 || s[3] == 0) {
    throw ShapeError("fusion_forward: expected [B," + std::to_string(p.channels()) + ",H,W], got " + to_string(s));
  }
  Tape& tape = *x.tape;
  Var gated = temporal_gate(lstm_scan(to_tokens(x), p), p);
  Var spatial = from_tokens(gated, s[2], s[3]);
  Var conv = depthwise_conv2d(spatial, tape.parameter(p.dw_kernel), std::nullopt, 1, 1);
  Var y = relu(batchnorm2d(conv, p.bn));
  return add(y, x);
}

}  // namespace richunet

#include "richunet/k_attention.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numeric>

#include "richunet/error.hpp"
#include "richunet/ops.hpp"

namespace richunet {

namespace {

void warn_topk_clamped(std::size_t k, std::size_t n) {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true)) {
    std::cerr << "richunet: topk " << k << " exceeds token count " << n << "; using " << n << "\n";
  }
}

// [B,N,C] -> [B,H,N,d]
Var split_heads(Var x, std::size_t heads) {
  const Shape s = x.shape();
  return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

// [B,H,N,d] -> [B,N,C]
Var merge_heads(Var x) {
  const Shape s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

}  // namespace

KAttentionParams KAttentionParams::create(std::size_t channels, std::size_t heads, std::size_t topk,
                                          double drop_rate, Rng& rng) {
  KAttentionParams p;
  p.w_q = he_uniform({channels, channels}, channels, rng);
  p.w_k = he_uniform({channels, channels}, channels, rng);
  p.w_v = he_uniform({channels, channels}, channels, rng);
  p.w_o = he_uniform({channels, channels}, channels, rng);
  p.heads = heads;
  p.topk = topk;
  p.drop_rate = drop_rate;
  p.validate();
  return p;
}

KAttentionParams KAttentionParams::zeros(std::size_t channels, std::size_t heads, std::size_t topk) {
  KAttentionParams p;
  p.w_q = p.w_k = p.w_v = p.w_o = Tensor::zeros({channels, channels});
  p.heads = heads;
  p.topk = topk;
  p.validate();
  return p;
}

double KAttentionParams::score_scale() const {
  return scale.value_or(1.0 / std::sqrt(static_cast<double>(head_dim())));
}

void KAttentionParams::validate() const {
  const std::size_t c = channels();
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->shape() != Shape{c, c}) throw ConfigError("k_attention: projection matrices must all be CxC");
  }
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("k_attention: channels " + std::to_string(c) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (topk == 0) throw ConfigError("k_attention: topk must be >= 1");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ConfigError("k_attention: drop_rate must lie in [0,1)");
  if (scale && !(*scale > 0.0)) throw ConfigError("k_attention: scale must be positive");
}

void KAttentionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w_q", w_q, true);
  fn(prefix + ".w_k", w_k, true);
  fn(prefix + ".w_v", w_v, true);
  fn(prefix + ".w_o", w_o, true);
}

QueryKeyValue project_qkv(Var x, const KAttentionParams& p) {
  p.validate();
  if (x.shape().size() != 3 || x.shape()[2] != p.channels()) {
    throw ShapeError("project_qkv: expected [B,N," + std::to_string(p.channels()) + "], got " + to_string(x.shape()));
  }
  Tape& tape = *x.tape;
  return {split_heads(matmul(x, tape.parameter(p.w_q)), p.heads),
          split_heads(matmul(x, tape.parameter(p.w_k)), p.heads),
          split_heads(matmul(x, tape.parameter(p.w_v)), p.heads)};
}

std::vector<std::vector<std::size_t>> topk_select(const Tensor& scores, std::size_t k) {
  if (scores.rank() == 0) throw ShapeError("topk_select: scores need at least one axis");
  const std::size_t n = scores.shape().back();
  if (k > n) {
    warn_topk_clamped(k, n);
    k = n;
  }
  const std::size_t rows = scores.size() / n;
  std::vector<std::vector<std::size_t>> out(rows);
  std::vector<std::size_t> order(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = scores.data().data() + r * n;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                      [row](std::size_t a, std::size_t b) {
                        // NaN ranks first so it reaches the softmax and surfaces in the loss.
                        const bool na = std::isnan(row[a]), nb = std::isnan(row[b]);
                        if (na || nb) return na != nb ? na : a < b;
                        return row[a] > row[b] || (row[a] == row[b] && a < b);
                      });
    out[r].assign(order.begin(), order.begin() + static_cast<long>(k));
  }
  return out;
}

Tensor topk_mask(const Tensor& scores, std::size_t k) {
  Tensor mask(scores.shape());
  const std::size_t n = scores.shape().back();
  const auto selected = topk_select(scores, k);
  for (std::size_t r = 0; r < selected.size(); ++r) {
    for (std::size_t j : selected[r]) mask[r * n + j] = 1.0;
  }
  return mask;
}

Var k_attention_forward(Var x, const KAttentionParams& p, Rng& rng, KAttentionTrace* trace) {
  const QueryKeyValue qkv = project_qkv(x, p);
  Var scores = scale(matmul(qkv.q, permute(qkv.k, {0, 1, 3, 2})), p.score_scale());
  const Tensor mask = topk_mask(scores.value(), p.topk);
  Var attention = masked_softmax(scores, mask);
  if (trace != nullptr) {
    trace->scores = scores.value();
    trace->mask = mask;
    trace->attention = attention.value();
  }
  Var weights = dropout(attention, p.drop_rate, rng);
  Var heads_out = matmul(weights, qkv.v);
  Var projected = matmul(merge_heads(heads_out), x.tape->parameter(p.w_o));
  return add(projected, x);
}

}  // namespace richunet

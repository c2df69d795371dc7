#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "richunet/autodiff.hpp"
#include "richunet/params.hpp"
#include "richunet/rng.hpp"

namespace richunet {

/// Learnable state of a sparse top-k multi-head self-attention block.
///
/// The projections are C x C matrices applied as X W (row-vector tokens);
/// head h owns columns [h*d_k, (h+1)*d_k) of W_q, W_k and W_v. Heads are
/// concatenated and mixed by a single W_o before the residual add.
struct KAttentionParams {
  Tensor w_q;
  Tensor w_k;
  Tensor w_v;
  Tensor w_o;
  std::size_t heads = 1;
  std::size_t topk = 1;
  double drop_rate = 0.0;
  /// Score multiplier; 1/sqrt(d_k) when unset.
  std::optional<double> scale;

  static KAttentionParams create(std::size_t channels, std::size_t heads, std::size_t topk, double drop_rate,
                                 Rng& rng);
  static KAttentionParams zeros(std::size_t channels, std::size_t heads, std::size_t topk);

  std::size_t channels() const { return w_q.rank() == 2 ? w_q.dim(0) : 0; }
  std::size_t head_dim() const { return channels() / heads; }
  double score_scale() const;
  /// Throws ConfigError on violated invariants.
  void validate() const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct QueryKeyValue {
  Var q;  ///< [B,H,N,d_k]
  Var k;
  Var v;
};

/// Q = XW_q, K = XW_k, V = XW_v split into heads.
QueryKeyValue project_qkv(Var x, const KAttentionParams& p);

/// Indices of the min(k, N) largest entries of each row of `scores`
/// (last axis), in descending score order; ties go to the lower index.
std::vector<std::vector<std::size_t>> topk_select(const Tensor& scores, std::size_t k);
/// Binary mask with the same shape as `scores` marking topk_select.
Tensor topk_mask(const Tensor& scores, std::size_t k);

/// Optional taps into intermediate values, for inspection and tests.
struct KAttentionTrace {
  Tensor scores;     ///< scaled S, [B,H,N,N]
  Tensor mask;       ///< top-k mask
  Tensor attention;  ///< masked softmax before dropout
};

/// Sparse attention followed by the output projection and residual add.
/// x: [B,N,C] -> [B,N,C].
Var k_attention_forward(Var x, const KAttentionParams& p, Rng& rng, KAttentionTrace* trace = nullptr);

}  // namespace richunet

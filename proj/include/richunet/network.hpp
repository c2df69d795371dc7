#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "richunet/fusion_layer.hpp"
#include "richunet/k_attention.hpp"
#include "richunet/msagf.hpp"

namespace richunet {

struct RichUNetConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::array<std::size_t, 3> stage_channels{16, 32, 64};
  std::size_t heads = 4;
  std::size_t topk = 8;
  double drop_rate = 0.1;
  std::size_t patch_size = 2;
  std::size_t bottleneck_channels = 128;
  std::size_t reduction = 4;
  // Ablation switches; a disabled block is replaced by the identity
  // (MSAGF by plain addition of its two inputs).
  bool use_k_attention = true;
  bool use_fusion_layer = true;
  bool use_msagf = true;

  /// Small configuration for gradient checks: 16x16 inputs.
  static RichUNetConfig micro();

  /// Throws ConfigError naming the violated field.
  void validate() const;
  /// Inputs must be divisible by 8 * patch_size in both extents.
  void validate_input(std::size_t height, std::size_t width) const;
  std::size_t spatial_multiple() const { return 8 * patch_size; }
};

/// conv3x3 (no bias) -> batch norm -> ReLU.
struct ConvBlock {
  Tensor weight;
  BatchNormState bn;

  static ConvBlock create(std::size_t in, std::size_t out, Rng& rng);
  Var operator()(Var x);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct DecoderLevel {
  Tensor match_weight;  ///< 1x1 conv to the skip's channel count
  Tensor match_bias;
  MsagfParams msagf;
  ConvBlock conv;
};

struct EncoderOutput {
  std::array<Var, 3> skips;  ///< pre-pool activations at H, H/2, H/4
  Var deepest;               ///< H/8
};

class RichUNet {
 public:
  /// Initialises every weight from `rng`; deterministic for a given seed.
  static RichUNet build(const RichUNetConfig& config, Rng& rng);

  const RichUNetConfig& config() const { return config_; }

  EncoderOutput encode(Var x);
  /// K-Attention on the token grid, then the Fusion-Layer. Shape preserving.
  Var attend_stage(Var deepest, Rng& rng);
  /// Patch embedding and projection back to the decoder entry resolution.
  Var bottleneck(Var x);
  /// Logits [B,num_classes,H,W].
  Var forward(Var x, Rng& rng);

  /// Enumerates parameters and buffers of the enabled blocks in a fixed order
  /// with stable names.
  void visit(const ParamVisitor& fn);
  std::size_t parameter_count();

  KAttentionParams& attention() { return attention_; }
  FusionLayerParams& fusion() { return fusion_; }
  std::array<DecoderLevel, 3>& decoder() { return decoder_; }

 private:
  RichUNetConfig config_;
  std::array<std::array<ConvBlock, 2>, 3> encoder_;
  KAttentionParams attention_;
  FusionLayerParams fusion_;
  Tensor patch_weight_;
  BatchNormState patch_bn_;
  Tensor bridge_weight_;
  Tensor bridge_bias_;
  std::array<DecoderLevel, 3> decoder_;
  Tensor head_weight_;
  Tensor head_bias_;
};

}  // namespace richunet

#include "richunet/network.hpp"

#include "richunet/error.hpp"
#include "richunet/ops.hpp"

namespace richunet {

namespace {

bool power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

RichUNetConfig RichUNetConfig::micro() {
  RichUNetConfig c;
  c.stage_channels = {2, 3, 4};
  c.heads = 2;
  c.topk = 2;
  c.drop_rate = 0.0;
  c.patch_size = 2;
  c.bottleneck_channels = 8;
  c.reduction = 1;
  return c;
}

void RichUNetConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("invalid config: " + field + " " + why);
  };
  if (in_channels == 0) fail("in_channels", "must be >= 1");
  if (num_classes < 2) fail("num_classes", "must be >= 2");
  if (stage_channels[0] == 0) fail("stage_channels", "must be positive");
  if (!(stage_channels[0] < stage_channels[1] && stage_channels[1] < stage_channels[2])) {
    fail("stage_channels", "ascending required");
  }
  if (heads == 0) fail("heads", "must be >= 1");
  if (stage_channels[2] % heads != 0) fail("heads", "must divide stage_channels[2]");
  if (bottleneck_channels == 0 || bottleneck_channels % heads != 0) {
    fail("bottleneck_channels", "must be a positive multiple of heads");
  }
  if (topk == 0) fail("topk", "must be >= 1");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) fail("drop_rate", "must lie in [0,1)");
  if (!power_of_two(patch_size)) fail("patch_size", "must be a power of two");
  if (reduction == 0) fail("reduction", "must be >= 1");
  for (std::size_t c : stage_channels) {
    if (c % reduction != 0) fail("reduction", "must divide every stage_channels entry");
  }
}

void RichUNetConfig::validate_input(std::size_t height, std::size_t width) const {
  const std::size_t m = spatial_multiple();
  if (height == 0 || width == 0 || height % m != 0 || width % m != 0) {
    throw ShapeError("input extent " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be a positive multiple of " + std::to_string(m));
  }
}

ConvBlock ConvBlock::create(std::size_t in, std::size_t out, Rng& rng) {
  return ConvBlock{he_uniform({out, in, 3, 3}, in * 9, rng), BatchNormState::create(out)};
}

Var ConvBlock::operator()(Var x) {
  return relu(batchnorm2d(conv2d(x, x.tape->parameter(weight), std::nullopt, 1, 1), bn));
}

void ConvBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight, true);
  visit_batchnorm(prefix + ".bn", bn, fn);
}

RichUNet RichUNet::build(const RichUNetConfig& config, Rng& rng) {
  config.validate();
  RichUNet net;
  net.config_ = config;
  const auto& ch = config.stage_channels;

  std::size_t in = config.in_channels;
  for (std::size_t s = 0; s < 3; ++s) {
    net.encoder_[s][0] = ConvBlock::create(in, ch[s], rng);
    net.encoder_[s][1] = ConvBlock::create(ch[s], ch[s], rng);
    in = ch[s];
  }

  net.attention_ = KAttentionParams::create(ch[2], config.heads, config.topk, config.drop_rate, rng);
  net.fusion_ = FusionLayerParams::create(ch[2], rng);

  const std::size_t p = config.patch_size;
  net.patch_weight_ = he_uniform({config.bottleneck_channels, ch[2], p, p}, ch[2] * p * p, rng);
  net.patch_bn_ = BatchNormState::create(config.bottleneck_channels);
  net.bridge_weight_ = he_uniform({ch[2], config.bottleneck_channels, 1, 1}, config.bottleneck_channels, rng);
  net.bridge_bias_ = Tensor::zeros({ch[2]});

  std::size_t current = ch[2];
  for (std::size_t level = 0; level < 3; ++level) {
    const std::size_t skip = ch[2 - level];
    DecoderLevel& d = net.decoder_[level];
    d.match_weight = he_uniform({skip, current, 1, 1}, current, rng);
    d.match_bias = Tensor::zeros({skip});
    d.msagf = MsagfParams::create(skip, config.reduction, rng);
    d.conv = ConvBlock::create(skip, skip, rng);
    current = skip;
  }

  net.head_weight_ = he_uniform({config.num_classes, ch[0], 1, 1}, ch[0], rng);
  net.head_bias_ = Tensor::zeros({config.num_classes});
  return net;
}

EncoderOutput RichUNet::encode(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != config_.in_channels) {
    throw ShapeError("encode: expected [B," + std::to_string(config_.in_channels) + ",H,W], got " + to_string(s));
  }
  config_.validate_input(s[2], s[3]);
  EncoderOutput out;
  Var h = x;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    h = encoder_[stage][1](encoder_[stage][0](h));
    out.skips[stage] = h;
    h = maxpool2d(h, 2, 2);
  }
  out.deepest = h;
  return out;
}

Var RichUNet::attend_stage(Var deepest, Rng& rng) {
  const Shape s = deepest.shape();
  Var h = deepest;
  if (config_.use_k_attention) h = from_tokens(k_attention_forward(to_tokens(h), attention_, rng), s[2], s[3]);
  if (config_.use_fusion_layer) h = fusion_forward(h, fusion_);
  return h;
}

Var RichUNet::bottleneck(Var x) {
  const Shape& s = x.shape();
  const std::size_t p = config_.patch_size;
  if (s.size() != 4 || s[2] % p != 0 || s[3] % p != 0) {
    throw ShapeError("bottleneck: extents of " + to_string(s) + " not divisible by patch size " + std::to_string(p));
  }
  Tape& tape = *x.tape;
  Var embedded = relu(batchnorm2d(conv2d(x, tape.parameter(patch_weight_), std::nullopt, p, 0), patch_bn_));
  Var h = conv2d(embedded, tape.parameter(bridge_weight_), tape.parameter(bridge_bias_));
  for (std::size_t f = p; f > 1; f /= 2) h = nearest_upsample2x(h);
  return h;
}

Var RichUNet::forward(Var x, Rng& rng) {
  EncoderOutput enc = encode(x);
  Var h = bottleneck(attend_stage(enc.deepest, rng));
  Tape& tape = *x.tape;
  for (std::size_t level = 0; level < 3; ++level) {
    DecoderLevel& d = decoder_[level];
    Var skip = enc.skips[2 - level];
    Var up = conv2d(nearest_upsample2x(h), tape.parameter(d.match_weight), tape.parameter(d.match_bias));
    Var fused = config_.use_msagf ? msagf_fuse(up, skip, d.msagf) : add(up, skip);
    h = d.conv(fused);
  }
  return conv2d(h, tape.parameter(head_weight_), tape.parameter(head_bias_));
}

void RichUNet::visit(const ParamVisitor& fn) {
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < 2; ++i) {
      encoder_[s][i].visit("encoder." + std::to_string(s) + "." + std::to_string(i), fn);
    }
  }
  if (config_.use_k_attention) attention_.visit("k_attention", fn);
  if (config_.use_fusion_layer) fusion_.visit("fusion_layer", fn);
  fn("bottleneck.patch_weight", patch_weight_, true);
  visit_batchnorm("bottleneck.bn", patch_bn_, fn);
  fn("bottleneck.bridge_weight", bridge_weight_, true);
  fn("bottleneck.bridge_bias", bridge_bias_, true);
  for (std::size_t level = 0; level < 3; ++level) {
    const std::string prefix = "decoder." + std::to_string(level);
    DecoderLevel& d = decoder_[level];
    fn(prefix + ".match_weight", d.match_weight, true);
    fn(prefix + ".match_bias", d.match_bias, true);
    if (config_.use_msagf) d.msagf.visit(prefix + ".msagf", fn);
    d.conv.visit(prefix + ".conv", fn);
  }
  fn("head.weight", head_weight_, true);
  fn("head.bias", head_bias_, true);
}

std::size_t RichUNet::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) n += t.size();
  });
  return n;
}

}  // namespace richunet

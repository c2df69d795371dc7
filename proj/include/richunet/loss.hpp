#pragma once

#include <vector>

#include "richunet/autodiff.hpp"
#include "richunet/metrics.hpp"

namespace richunet {

/// lambda * mean pixelwise cross-entropy
///   + (1 - lambda) * (1 - (2 sum(p g) + 1) / (sum(p) + sum(g) + 1))
/// where p is the class-1 softmax probability over the whole batch.
/// logits: [B,K,H,W]; one mask per batch item.
Var segmentation_loss(Var logits, const std::vector<BinaryMask>& targets, double lambda = 0.5);

}  // namespace richunet

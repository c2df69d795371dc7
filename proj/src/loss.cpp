#include "richunet/loss.hpp"

#include "richunet/error.hpp"
#include "richunet/ops.hpp"

namespace richunet {

Var segmentation_loss(Var logits, const std::vector<BinaryMask>& targets, double lambda) {
  const Shape& s = logits.shape();
  if (s.size() != 4 || s[0] != targets.size() || s[1] < 2) {
    throw ShapeError("segmentation_loss: logits " + to_string(s) + " vs " + std::to_string(targets.size()) +
                     " masks");
  }
  const std::size_t batch = s[0], classes = s[1], h = s[2], w = s[3], hw = h * w;
  for (const auto& m : targets) {
    if (m.height() != h || m.width() != w) throw ShapeError("segmentation_loss: mask extent mismatch");
  }
  Tape& tape = *logits.tape;

  // Class axis last: [B,H,W,K].
  Var log_probs = log_softmax(permute(logits, {0, 2, 3, 1}));
  Tensor one_hot({batch, h, w, classes});
  Tensor fg_target({batch, h, w, classes});
  Tensor fg_select({batch, h, w, classes});
  double target_mass = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      const bool on = targets[b][i];
      const std::size_t base = (b * hw + i) * classes;
      one_hot[base + (on ? 1 : 0)] = 1.0;
      fg_target[base + 1] = on ? 1.0 : 0.0;
      fg_select[base + 1] = 1.0;
      target_mass += on ? 1.0 : 0.0;
    }
  }
  const double pixels = static_cast<double>(batch * hw);
  Var ce = scale(sum(mul(log_probs, tape.constant(std::move(one_hot)))), -1.0 / pixels);

  Var probs = exp(log_probs);
  Var overlap = sum(mul(probs, tape.constant(std::move(fg_target))));
  Var predicted = sum(mul(probs, tape.constant(std::move(fg_select))));
  Var ratio = div(add_scalar(scale(overlap, 2.0), 1.0), add_scalar(predicted, target_mass + 1.0));
  Var dice_loss = add_scalar(scale(ratio, -1.0), 1.0);

  return add(scale(ce, lambda), scale(dice_loss, 1.0 - lambda));
}

}  // namespace richunet

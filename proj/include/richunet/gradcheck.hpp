#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "richunet/autodiff.hpp"

namespace richunet {

struct GradCheckOptions {
  double step = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  /// Entries checked per target; 0 checks every entry.
  std::size_t max_entries = 0;
  Mode mode = Mode::training;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

/// Compares reverse-mode gradients against central finite differences.
///
/// `loss` must register every target via Tape::parameter and return a scalar.
/// The targets are perturbed in place and restored afterwards, so the loss
/// must be a deterministic function of them.
GradCheckResult gradcheck(const std::function<Var(Tape&)>& loss, std::span<Tensor* const> targets,
                          const GradCheckOptions& options = {});

}  // namespace richunet

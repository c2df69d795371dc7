#include "richunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "richunet/error.hpp"

namespace richunet {

GradCheckResult gradcheck(const std::function<Var(Tape&)>& loss, std::span<Tensor* const> targets,
                          const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape(options.mode);
    Var out = loss(tape);
    Gradients grads = backward(tape, out);
    for (Tensor* t : targets) {
      const Tensor* g = grads.of(*t);
      if (g == nullptr) throw UsageError("gradcheck: target was not registered on the tape");
      analytic.push_back(*g);
    }
  }

  auto evaluate = [&] {
    Tape tape(options.mode);
    return loss(tape).value().item();
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Tensor& target = *targets[k];
    const std::size_t n = target.size();
    const std::size_t stride =
        options.max_entries == 0 || n <= options.max_entries ? 1 : (n + options.max_entries - 1) / options.max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = target[i];
      target[i] = saved + options.step;
      const double plus = evaluate();
      target[i] = saved - options.step;
      const double minus = evaluate();
      target[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.entries;
    }
  }
  return result;
}

}  // namespace richunet

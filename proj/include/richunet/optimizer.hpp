#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "richunet/autodiff.hpp"
#include "richunet/params.hpp"

namespace richunet {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Moments are keyed by
/// parameter name so they can be checkpointed.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// One update of every trainable tensor of `model` that has
  /// a gradient in `grads`; `model` must provide visit(ParamVisitor).
  template <typename Model>
  void step(Model& model, const Gradients& grads) {
    ++steps_;
    model.visit([&](const std::string& name, Tensor& param, bool trainable) {
      if (!trainable) return;
      if (const Tensor* g = grads.of(param)) update(name, param, *g);
    });
  }

  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t steps) { steps_ = steps; }
  const AdamOptions& options() const { return options_; }

  std::map<std::string, Tensor>& first_moments() { return m_; }
  std::map<std::string, Tensor>& second_moments() { return v_; }

 private:
  void update(const std::string& name, Tensor& param, const Tensor& grad);

  AdamOptions options_;
  std::size_t steps_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace richunet

#include "richunet/optimizer.hpp"

#include <cmath>

#include "richunet/error.hpp"

namespace richunet {

void Adam::update(const std::string& name, Tensor& param, const Tensor& grad) {
  if (grad.shape() != param.shape()) throw ShapeError("adam: gradient shape mismatch for " + name);
  auto [mit, m_new] = m_.try_emplace(name, Tensor::zeros(param.shape()));
  auto [vit, v_new] = v_.try_emplace(name, Tensor::zeros(param.shape()));
  Tensor& m = mit->second;
  Tensor& v = vit->second;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.eps);
  }
}

}  // namespace richunet

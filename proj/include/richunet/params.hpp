#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "richunet/ops.hpp"
#include "richunet/rng.hpp"
#include "richunet/tensor.hpp"

namespace richunet {

/// Callback used to enumerate named tensors of a model. `trainable` is false
/// for buffers such as batch-norm running statistics.
using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor, bool trainable)>;

/// U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);
/// Square orthogonal matrix: Q factor of a Gaussian matrix, sign-normalised.
Tensor orthogonal(std::size_t n, Rng& rng);

void visit_batchnorm(const std::string& prefix, BatchNormState& bn, const ParamVisitor& fn);

}  // namespace richunet

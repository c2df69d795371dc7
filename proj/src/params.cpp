#include "richunet/params.hpp"

#include <cmath>

#include <Eigen/QR>

namespace richunet {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor orthogonal(std::size_t n, Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix the sign ambiguity so the factorisation is unique.
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Tensor t({n, n});
  t.matrix(n, n) = q;
  return t;
}

void visit_batchnorm(const std::string& prefix, BatchNormState& bn, const ParamVisitor& fn) {
  fn(prefix + ".gamma", bn.gamma, true);
  fn(prefix + ".beta", bn.beta, true);
  fn(prefix + ".running_mean", bn.running_mean, false);
  fn(prefix + ".running_var", bn.running_var, false);
}

}  // namespace richunet

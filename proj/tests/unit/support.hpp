#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <cstddef>
#include <vector>

#include "richunet/autodiff.hpp"
#include "richunet/k_attention.hpp"
#include "richunet/metrics.hpp"
#include "richunet/ops.hpp"
#include "richunet/rng.hpp"

namespace test {

using richunet::Rng;
using richunet::Shape;
using richunet::Tape;
using richunet::Tensor;
using richunet::Var;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

// Central differences of L = sum(f(inputs) * R) against the tape gradient of
// every input entry. Relative error uses a 1e-3 floor on the denominator.
inline double fd_max_rel_error(const Builder& f, std::vector<Tensor> inputs, Rng& rng, double h = 1e-5,
                               richunet::Mode mode = richunet::Mode::training) {
  Tensor weights;
  auto evaluate = [&](std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape tape(mode);
    std::vector<Var> vars;
    for (const Tensor& x : xs) vars.push_back(tape.input(x));
    Var out = f(tape, vars);
    if (weights.empty() || weights.shape() != out.shape()) weights = random_tensor(out.shape(), rng);
    Var loss = richunet::sum(out * tape.constant(weights));
    if (grads) {
      auto g = richunet::backward(tape, loss);
      for (const Var& v : vars) grads->push_back(g[v]);
    }
    return loss.value().item();
  };
  std::vector<Tensor> analytic;
  evaluate(inputs, &analytic);
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double saved = inputs[t][i];
      inputs[t][i] = saved + h;
      const double up = evaluate(inputs, nullptr);
      inputs[t][i] = saved - h;
      const double down = evaluate(inputs, nullptr);
      inputs[t][i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3}));
    }
  }
  return worst;
}

// Same check for external parameter tensors that `loss` registers through
// Tape::parameter. The tensors are perturbed in place and restored.
inline double fd_param_rel_error(const std::function<Var(Tape&)>& loss, const std::vector<Tensor*>& params,
                                 double h = 1e-5, richunet::Mode mode = richunet::Mode::training) {
  auto value = [&] {
    Tape tape(mode);
    return loss(tape).value().item();
  };
  Tape tape(mode);
  auto grads = richunet::backward(tape, loss(tape));
  std::vector<Tensor> analytic;
  for (Tensor* p : params) {
    const Tensor* g = grads.of(*p);
    analytic.push_back(g ? *g : Tensor::zeros(p->shape()));
  }
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = value();
      p[i] = saved - h;
      const double down = value();
      p[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3}));
    }
  }
  return worst;
}

// Unmasked multi-head attention with scalar loops.
inline Tensor dense_attention_oracle(const Tensor& x, const richunet::KAttentionParams& p) {
  const std::size_t B = x.dim(0), N = x.dim(1), C = x.dim(2), d = p.head_dim();
  auto proj = [&](const Tensor& w, std::size_t b, std::size_t n, std::size_t c) {
    double s = 0;
    for (std::size_t i = 0; i < C; ++i) s += x[(b * N + n) * C + i] * w[i * C + c];
    return s;
  };
  Tensor out = x;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> merged(N * C, 0.0);
    for (std::size_t h = 0; h < p.heads; ++h)
      for (std::size_t i = 0; i < N; ++i) {
        std::vector<double> s(N);
        for (std::size_t j = 0; j < N; ++j) {
          double dot = 0;
          for (std::size_t e = 0; e < d; ++e) dot += proj(p.w_q, b, i, h * d + e) * proj(p.w_k, b, j, h * d + e);
          s[j] = dot * p.score_scale();
        }
        double m = *std::max_element(s.begin(), s.end()), z = 0;
        for (double& v : s) z += (v = std::exp(v - m));
        for (std::size_t e = 0; e < d; ++e) {
          double acc = 0;
          for (std::size_t j = 0; j < N; ++j) acc += s[j] / z * proj(p.w_v, b, j, h * d + e);
          merged[i * C + h * d + e] = acc;
        }
      }
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0;
        for (std::size_t e = 0; e < C; ++e) acc += merged[i * C + e] * p.w_o[e * C + c];
        out[(b * N + i) * C + c] += acc;
      }
  }
  return out;
}

// Foreground pixels with a background or out-of-range 4-neighbour.
inline std::set<richunet::Pixel> brute_boundary(const richunet::BinaryMask& m) {
  std::set<richunet::Pixel> out;
  const long H = long(m.height()), W = long(m.width());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      if (!m(std::size_t(y), std::size_t(x))) continue;
      const long dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        long v = y + dy[k], u = x + dx[k];
        if (v < 0 || u < 0 || v >= H || u >= W || !m(std::size_t(v), std::size_t(u))) {
          out.insert({std::size_t(y), std::size_t(x)});
          break;
        }
      }
    }
  return out;
}

inline double p95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double rank = 0.95 * double(v.size() - 1);
  const std::size_t lo = std::size_t(std::floor(rank)), hi = std::size_t(std::ceil(rank));
  return v[lo] + (v[hi] - v[lo]) * (rank - double(lo));
}

inline double brute_directed(const richunet::BinaryMask& a, const richunet::BinaryMask& b) {
  std::vector<double> d;
  for (auto [y, x] : brute_boundary(a)) {
    double best = 1e300;
    for (auto [v, u] : brute_boundary(b)) best = std::min(best, std::hypot(double(y) - double(v), double(x) - double(u)));
    d.push_back(best);
  }
  return p95(d);
}

// Symmetric 95th percentile distance over all boundary pairs.
inline double brute_hd95(const richunet::BinaryMask& a, const richunet::BinaryMask& b) {
  return std::max(brute_directed(a, b), brute_directed(b, a));
}

}  // namespace test

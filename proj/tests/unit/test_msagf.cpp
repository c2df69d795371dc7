#include <doctest.h>

#include <cmath>

#include "richunet/error.hpp"
#include "richunet/msagf.hpp"
#include "support.hpp"

using namespace richunet;
using test::random_tensor;

namespace {

MsagfParams random_params(std::size_t c, std::size_t r, Rng& rng) {
  MsagfParams p = MsagfParams::zeros(c, r);
  p.w_1 = random_tensor(p.w_1.shape(), rng, -2, 2);
  p.w_2 = random_tensor(p.w_2.shape(), rng, -2, 2);
  p.dw_kernel = random_tensor(p.dw_kernel.shape(), rng);
  p.bn.gamma = random_tensor({c}, rng, 0.5, 1.5);
  p.bn.beta = random_tensor({c}, rng, -0.5, 0.5);
  return p;
}

double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_SUITE("msagf") {
  TEST_CASE("reduction must divide the channel count") {
    CHECK_THROWS_AS(MsagfParams::zeros(6, 4), ConfigError);
    CHECK_THROWS_AS(MsagfParams::zeros(4, 0), ConfigError);
    MsagfParams p = MsagfParams::zeros(8, 4);
    CHECK(p.w_1.shape() == Shape{2, 8, 1, 1});
    CHECK(p.w_2.shape() == Shape{8, 2, 1, 1});
  }

  TEST_CASE("global attention closed forms") {
    Rng rng(1);
    Tensor x1 = random_tensor({2, 4, 3, 3}, rng), x2 = random_tensor({2, 4, 3, 3}, rng);
    Tape tape;
    MsagfParams zero = MsagfParams::zeros(4, 2);
    CHECK(global_attention(tape.constant(x1), tape.constant(x2), zero).value() == Tensor::full({2, 4, 1, 1}, 0.5));

    MsagfParams p = random_params(4, 2, rng);
    Tensor neg = x1;
    for (double& v : neg.data()) v = -v;
    CHECK(global_attention(tape.constant(x1), tape.constant(neg), p).value() == Tensor::full({2, 4, 1, 1}, 0.5));
  }

  TEST_CASE("global attention sees only channel means") {
    Rng rng(2);
    MsagfParams p = random_params(4, 2, rng);
    Tensor x1 = random_tensor({2, 4, 3, 5}, rng), x2 = random_tensor({2, 4, 3, 5}, rng);
    Tensor means({2, 4, 3, 5});
    for (std::size_t bc = 0; bc < 8; ++bc) {
      double s = 0;
      for (std::size_t i = 0; i < 15; ++i) s += x1[bc * 15 + i] + x2[bc * 15 + i];
      for (std::size_t i = 0; i < 15; ++i) means[bc * 15 + i] = s / 15;
    }
    Tape tape;
    Tensor wg = global_attention(tape.constant(x1), tape.constant(x2), p).value();
    Tensor wm = global_attention(tape.constant(means), tape.constant(Tensor::zeros({2, 4, 3, 5})), p).value();
    CHECK(max_abs_diff(wg, wm) < 1e-14);
  }

  TEST_CASE("spatial attention") {
    Rng rng(3);
    Tensor x1 = random_tensor({2, 4, 4, 4}, rng), x2 = random_tensor({2, 4, 4, 4}, rng);
    Tape tape;
    MsagfParams zero = MsagfParams::zeros(4, 2);
    CHECK(spatial_attention(tape.constant(x1), tape.constant(x2), zero).value() == Tensor::full({2, 4, 4, 4}, 0.5));

    MsagfParams p = random_params(4, 2, rng);
    Tensor ws = spatial_attention(tape.constant(x1), tape.constant(x2), p).value();
    CHECK(ws.shape() == x1.shape());
    for (double v : ws.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }

    // sigmoid(BN(per-channel conv)), recomputed by hand
    for (std::size_t c = 0; c < 4; ++c) {
      std::vector<double> conv(2 * 16);
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t x = 0; x < 4; ++x) {
            double s = 0;
            for (long u = -1; u <= 1; ++u)
              for (long v = -1; v <= 1; ++v) {
                long yy = long(y) + u, xx = long(x) + v;
                if (yy < 0 || xx < 0 || yy > 3 || xx > 3) continue;
                std::size_t i = ((n * 4 + c) * 4 + std::size_t(yy)) * 4 + std::size_t(xx);
                s += (x1[i] + x2[i]) * p.dw_kernel[c * 9 + std::size_t(u + 1) * 3 + std::size_t(v + 1)];
              }
            conv[n * 16 + y * 4 + x] = s;
          }
      double m = 0, var = 0;
      for (double v : conv) m += v;
      m /= 32;
      for (double v : conv) var += (v - m) * (v - m);
      var /= 32;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 16; ++i) {
          double expect = sigmoid_scalar(p.bn.gamma[c] * (conv[n * 16 + i] - m) / std::sqrt(var + p.bn.eps) + p.bn.beta[c]);
          CHECK(std::abs(ws[(n * 4 + c) * 16 + i] - expect) < 1e-12);
        }
    }
  }

  TEST_CASE("gated fusion") {
    Rng rng(4);
    Tensor x1 = random_tensor({1, 3, 2, 2}, rng), x2 = random_tensor({1, 3, 2, 2}, rng);
    Tape tape;
    Var fused = gated_fusion(tape.constant(x1), tape.constant(x2), tape.constant(Tensor::ones({1, 3, 1, 1})),
                             tape.constant(Tensor::zeros({1, 3, 2, 2})));
    CHECK(fused.value() == x1);

    MsagfParams zero = MsagfParams::zeros(3, 1);
    Tensor half = msagf_fuse(tape.constant(x1), tape.constant(x2), zero).value();
    for (std::size_t i = 0; i < x1.size(); ++i) CHECK(half[i] == 0.5 * x1[i] + 0.5 * x2[i]);

    CHECK_THROWS_AS(msagf_fuse(tape.constant(x1), tape.constant(Tensor::zeros({1, 3, 2, 3})), zero), ShapeError);
  }

  TEST_CASE("gate contracts on random instances") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      MsagfParams p = random_params(4, 2, rng);
      Tensor a = random_tensor({2, 4, 3, 3}, rng, -3, 3), b = random_tensor({2, 4, 3, 3}, rng, -3, 3);
      Tape tape;
      Var x1 = tape.constant(a), x2 = tape.constant(b);
      Tensor wg = global_attention(x1, x2, p).value(), ws = spatial_attention(x1, x2, p).value();
      Tensor fused = msagf_fuse(x1, x2, p).value();
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(fused[i]) <= std::abs(a[i]) + std::abs(b[i]));

      // swapping the inputs keeps both gates and changes the fused map
      Tape swapped;
      Var y1 = swapped.constant(b), y2 = swapped.constant(a);
      CHECK(global_attention(y1, y2, p).value() == wg);
      CHECK(spatial_attention(y1, y2, p).value() == ws);
      CHECK(max_abs_diff(msagf_fuse(y1, y2, p).value(), fused) > 1e-9);

      double spread = 0;
      for (std::size_t bc = 0; bc < 8; ++bc)
        for (std::size_t i = 1; i < 9; ++i) spread = std::max(spread, std::abs(ws[bc * 9 + i] - ws[bc * 9]));
      CHECK(spread > 1e-6);
    }
  }

  TEST_CASE("module gradients match finite differences") {
    Rng rng(6);
    for (int trial = 0; trial < 3; ++trial) {
      MsagfParams p = random_params(4, 2, rng);
      Tensor a = random_tensor({2, 4, 2, 3}, rng), b = random_tensor({2, 4, 2, 3}, rng);
      Tensor weights = random_tensor({2, 4, 2, 3}, rng);
      auto loss = [&](Tape& tape) {
        return sum(msagf_fuse(tape.parameter(a), tape.parameter(b), p) * tape.constant(weights));
      };
      CHECK(test::fd_param_rel_error(loss, {&a, &b, &p.w_1, &p.w_2, &p.dw_kernel, &p.bn.gamma, &p.bn.beta}) < 1e-6);
    }
  }
}

#include "richunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "richunet/error.hpp"

namespace richunet {

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const char* op, Var x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(x.shape()));
  }
}

Tape& tape_of(Var x) {
  if (x.tape == nullptr) throw UsageError("Var is not bound to a tape");
  return *x.tape;
}

// y = f(x) with dy/dx expressed through (x, y).
template <typename F, typename D>
Var unary(const char* name, Var x, F f, D dfdx) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return tape_of(x).record(name, std::move(out), {x}, [dfdx](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& xin = ctx.input(0);
    const Tensor& y = ctx.output();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xin[i], y[i]);
  });
}

struct Conv2dGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kh, kw;
  std::size_t stride, padding, out_h, out_w;
};

Conv2dGeometry conv_geometry(const char* op, const Shape& xs, const Shape& ws, std::size_t stride,
                             std::size_t padding) {
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError(std::string(op) + ": expected x[B,C,H,W] and w[Co,Ci,kh,kw], got " + to_string(xs) + " and " +
                     to_string(ws));
  }
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be >= 1");
  Conv2dGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, padding, 0, 0};
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding) {
    throw ShapeError(std::string(op) + ": kernel " + to_string(ws) + " larger than padded input " + to_string(xs));
  }
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  return g;
}

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = x[c][oy*s - p + i][ox*s - p + j]
void im2col(const double* x, const Conv2dGeometry& g, double* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = xc + iy * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const Conv2dGeometry& g, double* x) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* dst = xc + iy * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_bias(const char* op, const std::optional<Var>& bias, std::size_t channels) {
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != channels)) {
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias->shape()) + " does not match " +
                     std::to_string(channels) + " output channels");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out += b.value();
  return tape_of(a).record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (ctx.needs(i)) ctx.input_grad(i) += ctx.grad();
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  out.vector() -= b.value().vector();
  return tape_of(a).record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.input_grad(0) += ctx.grad();
    if (ctx.needs(1)) ctx.input_grad(1).vector() -= ctx.grad().vector();
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  out.vector() = a.value().vector().cwiseProduct(b.value().vector());
  return tape_of(a).record("mul", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto g = ctx.grad().vector();
    if (ctx.needs(0)) ctx.input_grad(0).vector() += g.cwiseProduct(ctx.input(1).vector());
    if (ctx.needs(1)) ctx.input_grad(1).vector() += g.cwiseProduct(ctx.input(0).vector());
  });
}

Var div(Var a, Var b) {
  require_same_shape("div", a, b);
  Tensor out(a.shape());
  out.vector() = a.value().vector().cwiseQuotient(b.value().vector());
  return tape_of(a).record("div", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto g = ctx.grad().vector();
    const auto den = ctx.input(1).vector();
    if (ctx.needs(0)) ctx.input_grad(0).vector() += g.cwiseQuotient(den);
    if (ctx.needs(1)) {
      ctx.input_grad(1).vector() -= g.cwiseProduct(ctx.output().vector()).cwiseQuotient(den);
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  out.vector() *= factor;
  return tape_of(x).record("scale", std::move(out), {x}, [factor](BackwardContext& ctx) {
    ctx.input_grad(0).vector() += factor * ctx.grad().vector();
  });
}

Var add_scalar(Var x, double offset) {
  Tensor out = x.value();
  out.vector().array() += offset;
  return tape_of(x).record("add_scalar", std::move(out), {x},
                           [](BackwardContext& ctx) { ctx.input_grad(0) += ctx.grad(); });
}

Var sigmoid(Var x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var x) {
  // NaN passes through so non-finite losses stay visible.
  return unary("relu", x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sum(Var x) {
  const double total = x.value().vector().sum();
  return tape_of(x).record("sum", Tensor::scalar(total), {x}, [](BackwardContext& ctx) {
    ctx.input_grad(0).vector().array() += ctx.grad()[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

// ---------------------------------------------------------------------------
// Layout

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record("reshape", std::move(out), {x}, [](BackwardContext& ctx) {
    ctx.input_grad(0).vector() += ctx.grad().vector();
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute: axes do not match shape " + to_string(x.shape()));
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis list for shape " + to_string(x.shape()));
    seen[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  Tensor out(out_shape);
  if (out.empty()) return out;
  std::vector<std::size_t> index(rank, 0);
  std::size_t src = 0;
  const double* in = x.data().data();
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    out[flat] = in[src];
    for (std::size_t d = rank; d-- > 0;) {
      if (++index[d] < out_shape[d]) {
        src += strides[d];
        break;
      }
      src -= strides[d] * (out_shape[d] - 1);
      index[d] = 0;
    }
  }
  return out;
}

Var permute(Var x, std::vector<std::size_t> axes) {
  Tensor out = permute(x.value(), axes);
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
  return tape_of(x).record("permute", std::move(out), {x}, [inverse](BackwardContext& ctx) {
    ctx.input_grad(0) += permute(ctx.grad(), inverse);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  };
  if (as.size() < 2 || bs.size() < 2) throw mismatch();
  const std::size_t m = as[as.size() - 2];
  const std::size_t p = as.back();
  const std::size_t q = bs.back();
  if (bs[bs.size() - 2] != p) throw mismatch();
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  if (!a_batch.empty() && !b_batch.empty() && a_batch != b_batch) throw mismatch();

  const Shape& batch_shape = a_batch.empty() ? b_batch : a_batch;
  const std::size_t batch = numel(batch_shape);
  Shape out_shape = batch_shape;
  out_shape.push_back(m);
  out_shape.push_back(q);
  Tensor out(out_shape);

  const bool a_shared = a_batch.empty();
  const bool b_shared = b_batch.empty();
  if (b_shared) {
    // Fold the batch into rows: one GEMM.
    out.matrix(batch * m, q).noalias() = a.value().matrix(batch * m, p) * b.value().matrix(p, q);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const double* ap = a.value().data().data() + (a_shared ? 0 : i * m * p);
      const double* bp = b.value().data().data() + i * p * q;
      Tensor::ConstMatrixMap am(ap, m, p);
      Tensor::ConstMatrixMap bm(bp, p, q);
      Tensor::MatrixMap om(out.data().data() + i * m * q, m, q);
      om.noalias() = am * bm;
    }
  }

  return tape_of(a).record("matmul", std::move(out), {a, b}, [=](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& av = ctx.input(0);
    const Tensor& bv = ctx.input(1);
    if (b_shared) {
      if (ctx.needs(0)) {
        ctx.input_grad(0).matrix(batch * m, p).noalias() += g.matrix(batch * m, q) * bv.matrix(p, q).transpose();
      }
      if (ctx.needs(1)) {
        ctx.input_grad(1).matrix(p, q).noalias() += av.matrix(batch * m, p).transpose() * g.matrix(batch * m, q);
      }
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      Tensor::ConstMatrixMap gm(g.data().data() + i * m * q, m, q);
      Tensor::ConstMatrixMap am(av.data().data() + (a_shared ? 0 : i * m * p), m, p);
      Tensor::ConstMatrixMap bm(bv.data().data() + i * p * q, p, q);
      if (ctx.needs(0)) {
        Tensor::MatrixMap ga(ctx.input_grad(0).data().data() + (a_shared ? 0 : i * m * p), m, p);
        ga.noalias() += gm * bm.transpose();
      }
      if (ctx.needs(1)) {
        Tensor::MatrixMap gb(ctx.input_grad(1).data().data() + i * p * q, p, q);
        gb.noalias() += am.transpose() * gm;
      }
    }
  });
}

Var add_bias(Var x, Var bias) {
  const Shape& xs = x.shape();
  if (xs.empty() || bias.shape().size() != 1 || bias.shape()[0] != xs.back()) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match last axis of " + to_string(xs));
  }
  const std::size_t c = xs.back();
  const std::size_t rows = x.value().size() / c;
  Tensor out = x.value();
  out.matrix(rows, c).rowwise() += bias.value().vector().transpose();
  return tape_of(x).record("add_bias", std::move(out), {x, bias}, [rows, c](BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.input_grad(0) += ctx.grad();
    if (ctx.needs(1)) ctx.input_grad(1).vector() += ctx.grad().matrix(rows, c).colwise().sum().transpose();
  });
}

Var mul_channel(Var x, Var gate) {
  require_rank("mul_channel", x, 4);
  const Shape& xs = x.shape();
  if (gate.shape() != Shape{xs[0], xs[1], 1, 1}) {
    throw ShapeError("mul_channel: gate " + to_string(gate.shape()) + " does not match " + to_string(xs));
  }
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t hw = xs[2] * xs[3];
  Tensor out(xs);
  out.matrix(planes, hw) = gate.value().vector().asDiagonal() * x.value().matrix(planes, hw);
  return tape_of(x).record("mul_channel", std::move(out), {x, gate}, [planes, hw](BackwardContext& ctx) {
    const auto g = ctx.grad().matrix(planes, hw);
    if (ctx.needs(0)) ctx.input_grad(0).matrix(planes, hw) += ctx.input(1).vector().asDiagonal() * g;
    if (ctx.needs(1)) {
      ctx.input_grad(1).vector() += g.cwiseProduct(ctx.input(0).matrix(planes, hw)).rowwise().sum();
    }
  });
}

Var select_token(Var x, std::size_t t) {
  require_rank("select_token", x, 3);
  const std::size_t b = x.shape()[0], n = x.shape()[1], c = x.shape()[2];
  if (t >= n) throw ShapeError("select_token: token " + std::to_string(t) + " out of range for " + to_string(x.shape()));
  Tensor out({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(x.value().data().data() + (i * n + t) * c, c, out.data().data() + i * c);
  }
  return tape_of(x).record("select_token", std::move(out), {x}, [b, n, c, t](BackwardContext& ctx) {
    Tensor& gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t k = 0; k < c; ++k) gx[(i * n + t) * c + k] += g[i * c + k];
    }
  });
}

Var stack_tokens(std::span<const Var> tokens) {
  if (tokens.empty()) throw ShapeError("stack_tokens: empty sequence");
  const Shape first = tokens[0].shape();
  if (first.size() != 2) throw ShapeError("stack_tokens: expected [B,C] tokens, got " + to_string(first));
  const std::size_t b = first[0], c = first[1], n = tokens.size();
  Tensor out({b, n, c});
  for (std::size_t t = 0; t < n; ++t) {
    if (tokens[t].shape() != first) {
      throw ShapeError("stack_tokens: token shape " + to_string(tokens[t].shape()) + " vs " + to_string(first));
    }
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(tokens[t].value().data().data() + i * c, c, out.data().data() + (i * n + t) * c);
    }
  }
  return tape_of(tokens[0]).record(
      "stack_tokens", std::move(out), std::vector<Var>(tokens.begin(), tokens.end()), [b, n, c](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        for (std::size_t t = 0; t < n; ++t) {
          if (!ctx.needs(t)) continue;
          Tensor& gt = ctx.input_grad(t);
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t k = 0; k < c; ++k) gt[i * c + k] += g[(i * n + t) * c + k];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
  const Conv2dGeometry g = conv_geometry("conv2d", x.shape(), weight.shape(), stride, padding);
  if (weight.shape()[1] != g.in_channels) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  }
  check_bias("conv2d", bias, g.out_channels);
  const std::size_t k = g.in_channels * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t in_plane = g.in_channels * g.height * g.width;

  Tensor out({g.batch, g.out_channels, g.out_h, g.out_w});
  std::vector<double> cols(k * plane);
  const auto w = weight.value().matrix(g.out_channels, k);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.value().data().data() + b * in_plane, g, cols.data());
    Tensor::MatrixMap om(out.data().data() + b * g.out_channels * plane, g.out_channels, plane);
    om.noalias() = w * Tensor::ConstMatrixMap(cols.data(), k, plane);
    if (bias) om.colwise() += bias->value().vector();
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return tape_of(x).record("conv2d", std::move(out), std::move(inputs), [g, k, plane, in_plane,
                                                                         has_bias](BackwardContext& ctx) {
    const Tensor& grad = ctx.grad();
    const auto w = ctx.input(1).matrix(g.out_channels, k);
    std::vector<double> cols(k * plane);
    std::vector<double> gcols(k * plane);
    for (std::size_t b = 0; b < g.batch; ++b) {
      Tensor::ConstMatrixMap gm(grad.data().data() + b * g.out_channels * plane, g.out_channels, plane);
      if (ctx.needs(1)) {
        im2col(ctx.input(0).data().data() + b * in_plane, g, cols.data());
        ctx.input_grad(1).matrix(g.out_channels, k).noalias() +=
            gm * Tensor::ConstMatrixMap(cols.data(), k, plane).transpose();
      }
      if (ctx.needs(0)) {
        Tensor::MatrixMap gc(gcols.data(), k, plane);
        gc.noalias() = w.transpose() * gm;
        col2im(gcols.data(), g, ctx.input_grad(0).data().data() + b * in_plane);
      }
      if (has_bias && ctx.needs(2)) ctx.input_grad(2).vector() += gm.rowwise().sum();
    }
  });
}

Var depthwise_conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
  const Conv2dGeometry g = conv_geometry("depthwise_conv2d", x.shape(), weight.shape(), stride, padding);
  if (weight.shape()[0] != g.in_channels || weight.shape()[1] != 1) {
    throw ShapeError("depthwise_conv2d: weight " + to_string(weight.shape()) + " does not match input " +
                     to_string(x.shape()));
  }
  check_bias("depthwise_conv2d", bias, g.in_channels);
  const std::size_t c_count = g.in_channels;

  // Visits every (output pixel, tap) pair that lands inside the input.
  auto for_each_tap = [g](auto&& fn) {
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const std::size_t in_base = (b * g.in_channels + c) * g.height * g.width;
        const std::size_t out_base = (b * g.in_channels + c) * g.out_h * g.out_w;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          for (std::size_t i = 0; i < g.kh; ++i) {
            const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              for (std::size_t j = 0; j < g.kw; ++j) {
                const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
                if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
                fn(in_base + iy * g.width + ix, out_base + oy * g.out_w + ox, (c * g.kh + i) * g.kw + j);
              }
            }
          }
        }
      }
    }
  };

  Tensor out({g.batch, c_count, g.out_h, g.out_w});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  for_each_tap([&](std::size_t xi, std::size_t oi, std::size_t wi) { out[oi] += xv[xi] * wv[wi]; });
  if (bias) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < c_count; ++c) {
        double* dst = out.data().data() + (b * c_count + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] += bias->value()[c];
      }
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return tape_of(x).record("depthwise_conv2d", std::move(out), std::move(inputs),
                           [g, for_each_tap, has_bias](BackwardContext& ctx) {
                             const Tensor& grad = ctx.grad();
                             const Tensor& xv = ctx.input(0);
                             const Tensor& wv = ctx.input(1);
                             if (ctx.needs(0)) {
                               Tensor& gx = ctx.input_grad(0);
                               for_each_tap([&](std::size_t xi, std::size_t oi, std::size_t wi) {
                                 gx[xi] += grad[oi] * wv[wi];
                               });
                             }
                             if (ctx.needs(1)) {
                               Tensor& gw = ctx.input_grad(1);
                               for_each_tap([&](std::size_t xi, std::size_t oi, std::size_t wi) {
                                 gw[wi] += grad[oi] * xv[xi];
                               });
                             }
                             if (has_bias && ctx.needs(2)) {
                               Tensor& gb = ctx.input_grad(2);
                               const std::size_t plane = g.out_h * g.out_w;
                               for (std::size_t b = 0; b < g.batch; ++b) {
                                 for (std::size_t c = 0; c < g.in_channels; ++c) {
                                   const double* src = grad.data().data() + (b * g.in_channels + c) * plane;
                                   for (std::size_t p = 0; p < plane; ++p) gb[c] += src[p];
                                 }
                               }
                             }
                           });
}

Var maxpool2d(Var x, std::size_t kernel, std::size_t stride) {
  require_rank("maxpool2d", x, 4);
  const Shape& xs = x.shape();
  if (kernel == 0 || stride == 0) throw ShapeError("maxpool2d: kernel and stride must be >= 1");
  if (xs[2] % stride != 0 || xs[3] % stride != 0 || kernel > xs[2] || kernel > xs[3]) {
    throw ShapeError("maxpool2d: extents of " + to_string(xs) + " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor out({xs[0], xs[1], oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = p * h * w + (oy * stride + i) * w + ox * stride + j;
            if (xv[idx] > xv[best] || (std::isnan(xv[idx]) && !std::isnan(xv[best]))) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return tape_of(x).record("maxpool2d", std::move(out), {x}, [argmax = std::move(argmax)](BackwardContext& ctx) {
    Tensor& gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
  });
}

Var nearest_upsample2x(Var x) {
  require_rank("nearest_upsample2x", x, 4);
  const Shape& xs = x.shape();
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  Tensor out({xs[0], xs[1], 2 * h, 2 * w});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) out[(p * 2 * h + y) * 2 * w + xx] = xv[(p * h + y / 2) * w + xx / 2];
    }
  }
  return tape_of(x).record("nearest_upsample2x", std::move(out), {x}, [planes, h, w](BackwardContext& ctx) {
    Tensor& gx = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < 2 * h; ++y) {
        for (std::size_t xx = 0; xx < 2 * w; ++xx) gx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
      }
    }
  });
}

Var global_avg_pool(Var x) {
  require_rank("global_avg_pool", x, 4);
  const Shape& xs = x.shape();
  const std::size_t planes = xs[0] * xs[1], hw = xs[2] * xs[3];
  Tensor out({xs[0], xs[1], 1, 1});
  out.vector() = x.value().matrix(planes, hw).rowwise().mean();
  return tape_of(x).record("global_avg_pool", std::move(out), {x}, [planes, hw](BackwardContext& ctx) {
    ctx.input_grad(0).matrix(planes, hw).colwise() += ctx.grad().vector() / static_cast<double>(hw);
  });
}

// ---------------------------------------------------------------------------
// Normalisation

BatchNormState BatchNormState::create(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor::ones({channels});
  s.beta = Tensor::zeros({channels});
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::ones({channels});
  return s;
}

Var batchnorm2d(Var x, BatchNormState& state) {
  require_rank("batchnorm2d", x, 4);
  const Shape xs = x.shape();
  const std::size_t batch = xs[0], channels = xs[1], hw = xs[2] * xs[3];
  if (state.channels() != channels) {
    throw ShapeError("batchnorm2d: state has " + std::to_string(state.channels()) + " channels, input " + to_string(xs));
  }
  const std::size_t count = batch * hw;
  if (count == 0) throw ShapeError("batchnorm2d: empty input");
  Tape& tape = tape_of(x);
  Var gamma = tape.parameter(state.gamma);
  Var beta = tape.parameter(state.beta);
  const Tensor& xv = x.value();

  std::vector<double> mu(channels), inv_std(channels);
  if (tape.training()) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* src = xv.data().data() + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* src = xv.data().data() + (b * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (src[i] - m) * (src[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor xhat(xs);
  Tensor out(xs);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[base + i] = (xv[base + i] - mu[c]) * inv_std[c];
        out[base + i] = state.gamma[c] * xhat[base + i] + state.beta[c];
      }
    }
  }

  const bool batch_stats = tape.training();
  return tape.record("batchnorm2d", std::move(out), {x, gamma, beta},
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardContext& ctx) {
                       const Tensor& g = ctx.grad();
                       const Tensor& gam = ctx.input(1);
                       std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           const std::size_t base = (b * channels + c) * hw;
                           for (std::size_t i = 0; i < hw; ++i) {
                             sum_g[c] += g[base + i];
                             sum_gx[c] += g[base + i] * xhat[base + i];
                           }
                         }
                       }
                       if (ctx.needs(1)) {
                         Tensor& gg = ctx.input_grad(1);
                         for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gx[c];
                       }
                       if (ctx.needs(2)) {
                         Tensor& gb = ctx.input_grad(2);
                         for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
                       }
                       if (!ctx.needs(0)) return;
                       Tensor& gx = ctx.input_grad(0);
                       const double n = static_cast<double>(count);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           const std::size_t base = (b * channels + c) * hw;
                           const double k = gam[c] * inv_std[c];
                           for (std::size_t i = 0; i < hw; ++i) {
                             if (batch_stats) {
                               gx[base + i] += k * (g[base + i] - sum_g[c] / n - xhat[base + i] * sum_gx[c] / n);
                             } else {
                               gx[base + i] += k * g[base + i];
                             }
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Softmax and dropout

Var masked_softmax(Var logits, const Tensor& mask) {
  if (mask.shape() != logits.shape()) {
    throw ShapeError("masked_softmax: mask " + to_string(mask.shape()) + " vs logits " + to_string(logits.shape()));
  }
  if (logits.shape().empty()) throw ShapeError("masked_softmax: logits must have at least one axis");
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.value().size() / n;
  const Tensor& z = logits.value();
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double peak = -std::numeric_limits<double>::infinity();
    std::size_t allowed = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[base + j] == 0.0) continue;
      ++allowed;
      if (!(z[base + j] <= peak)) peak = z[base + j];  // NaN wins
    }
    if (allowed == 0) {
      throw UsageError("masked_softmax: row " + std::to_string(r) + " has no allowed entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[base + j] != 0.0) {
        out[base + j] = std::exp(z[base + j] - peak);
        total += out[base + j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j] /= total;
  }
  return tape_of(logits).record("masked_softmax", std::move(out), {logits}, [rows, n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& y = ctx.output();
    Tensor& gz = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < n; ++j) gz[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

Var log_softmax(Var logits) {
  if (logits.shape().empty()) throw ShapeError("log_softmax: logits must have at least one axis");
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.value().size() / n;
  const Tensor& z = logits.value();
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double peak = z[base];
    for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, z[base + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(z[base + j] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[base + j] = z[base + j] - lse;
  }
  return tape_of(logits).record("log_softmax", std::move(out), {logits}, [rows, n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& y = ctx.output();
    Tensor& gz = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += g[base + j];
      for (std::size_t j = 0; j < n; ++j) gz[base + j] += g[base + j] - std::exp(y[base + j]) * total;
    }
  });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (rate == 0.0 || !tape_of(x).training()) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor factor(x.shape());
  for (std::size_t i = 0; i < factor.size(); ++i) factor[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out(x.shape());
  out.vector() = x.value().vector().cwiseProduct(factor.vector());
  return tape_of(x).record("dropout", std::move(out), {x}, [factor = std::move(factor)](BackwardContext& ctx) {
    ctx.input_grad(0).vector() += ctx.grad().vector().cwiseProduct(factor.vector());
  });
}

}  // namespace richunet

namespace richunet {

Var to_tokens(Var x) {
  if (x.shape().size() != 4) throw ShapeError("to_tokens: expected [B,C,H,W], got " + to_string(x.shape()));
  const Shape s = x.shape();
  return reshape(permute(x, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

Var from_tokens(Var tokens, std::size_t height, std::size_t width) {
  const Shape s = tokens.shape();
  if (s.size() != 3 || s[1] != height * width) {
    throw ShapeError("from_tokens: " + to_string(s) + " is not a " + std::to_string(height) + "x" +
                     std::to_string(width) + " token grid");
  }
  return permute(reshape(tokens, {s[0], height, width, s[2]}), {0, 3, 1, 2});
}

}  // namespace richunet

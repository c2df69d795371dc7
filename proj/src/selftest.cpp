#include "richunet/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "richunet/checkpoint.hpp"
#include "richunet/dataset.hpp"
#include "richunet/error.hpp"
#include "richunet/fusion_layer.hpp"
#include "richunet/gradcheck.hpp"
#include "richunet/k_attention.hpp"
#include "richunet/loss.hpp"
#include "richunet/metrics.hpp"
#include "richunet/msagf.hpp"
#include "richunet/ops.hpp"
#include "richunet/pgm.hpp"
#include "richunet/trainer.hpp"

namespace richunet {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// Checks sum(f(inputs) * R) against finite differences with respect to the inputs.
double op_gradient_error(const std::function<Var(Tape&, std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                         Rng& rng) {
  Tensor weights;
  auto loss = [&](Tape& tape) {
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.parameter(t));
    Var out = f(tape, vars);
    if (weights.empty() || weights.shape() != out.shape()) weights = random_tensor(out.shape(), rng);
    return sum(out * tape.constant(weights));
  };
  std::vector<Tensor*> targets;
  for (Tensor& t : inputs) targets.push_back(&t);
  return gradcheck(loss, targets).max_rel_error;
}

SuiteResult gradient_suite() {
  Rng rng(11);
  using F = std::function<Var(Tape&, std::vector<Var>&)>;
  struct Case {
    const char* name;
    F f;
    std::vector<Shape> shapes;
    double lo = -1.0;
  };
  BatchNormState bn = BatchNormState::create(3);
  Tensor softmax_mask({2, 5}, 1.0);
  softmax_mask[1] = 0.0;
  softmax_mask[7] = 0.0;
  std::vector<Case> cases = {
      {"mul", [](Tape&, auto& v) { return v[0] * v[1]; }, {{3, 4}, {3, 4}}},
      {"div", [](Tape&, auto& v) { return div(v[0], v[1]); }, {{3, 4}, {3, 4}}, 0.5},
      {"sigmoid", [](Tape&, auto& v) { return sigmoid(v[0]); }, {{6}}},
      {"tanh", [](Tape&, auto& v) { return tanh(v[0]); }, {{6}}},
      {"exp", [](Tape&, auto& v) { return exp(v[0]); }, {{6}}},
      {"log", [](Tape&, auto& v) { return log(v[0]); }, {{6}}, 0.5},
      {"matmul", [](Tape&, auto& v) { return matmul(v[0], v[1]); }, {{2, 3, 4}, {4, 5}}},
      {"conv2d", [](Tape&, auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); }, {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}},
      {"depthwise_conv2d", [](Tape&, auto& v) { return depthwise_conv2d(v[0], v[1], std::nullopt, 1, 1); },
       {{2, 3, 4, 4}, {3, 1, 3, 3}}},
      {"maxpool2d", [](Tape&, auto& v) { return maxpool2d(v[0]); }, {{1, 2, 4, 4}}},
      {"upsample", [](Tape&, auto& v) { return nearest_upsample2x(v[0]); }, {{1, 2, 2, 3}}},
      {"global_avg_pool", [](Tape&, auto& v) { return global_avg_pool(v[0]); }, {{2, 3, 3, 3}}},
      {"batchnorm2d", [&bn](Tape&, auto& v) { return batchnorm2d(v[0], bn); }, {{2, 3, 3, 3}}},
      {"masked_softmax", [&softmax_mask](Tape&, auto& v) { return masked_softmax(v[0], softmax_mask); }, {{2, 5}}},
      {"log_softmax", [](Tape&, auto& v) { return log_softmax(v[0]); }, {{3, 4}}},
  };
  double worst = 0.0;
  std::string worst_name;
  for (const Case& c : cases) {
    for (int instance = 0; instance < 3; ++instance) {
      std::vector<Tensor> inputs;
      for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, 1.0));
      double err = op_gradient_error(c.f, inputs, rng);
      if (err > worst) worst = err, worst_name = c.name;
    }
  }

  KAttentionParams attention = KAttentionParams::create(4, 2, 3, 0.0, rng);
  FusionLayerParams fusion = FusionLayerParams::create(3, rng);
  MsagfParams msagf = MsagfParams::create(4, 2, rng);
  std::vector<std::pair<const char*, F>> blocks = {
      {"k_attention", [&](Tape&, auto& v) { return k_attention_forward(v[0], attention, rng); }},
      {"fusion_layer", [&](Tape&, auto& v) { return fusion_forward(v[0], fusion); }},
      {"msagf", [&](Tape&, auto& v) { return msagf_fuse(v[0], v[1], msagf); }},
  };
  std::vector<std::vector<Shape>> block_shapes = {{{1, 5, 4}}, {{2, 3, 2, 2}}, {{2, 4, 2, 2}, {2, 4, 2, 2}}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::vector<Tensor> inputs;
    for (const Shape& s : block_shapes[b]) inputs.push_back(random_tensor(s, rng));
    double err = op_gradient_error(blocks[b].second, inputs, rng);
    if (err > worst) worst = err, worst_name = blocks[b].first;
  }
  bool ok = worst < 1e-4;
  return {"gradients", ok, "max rel err " + fmt("%.2e", worst) + (worst_name.empty() ? "" : " (" + worst_name + ")")};
}

// out = x + concat_h(softmax(Q_h K_h^T s) V_h) W_o, computed without the tape.
Tensor dense_attention(const Tensor& x, const KAttentionParams& p) {
  const std::size_t n = x.dim(1), c = x.dim(2), d = p.head_dim();
  auto xm = x.matrix(n, c);
  Eigen::MatrixXd q = xm * p.w_q.matrix(c, c), k = xm * p.w_k.matrix(c, c), v = xm * p.w_v.matrix(c, c);
  Eigen::MatrixXd merged(n, c);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Eigen::MatrixXd s = q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose() * p.score_scale();
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      s.row(r).array() = (s.row(r).array() - s.row(r).maxCoeff()).exp();
      s.row(r) /= s.row(r).sum();
    }
    merged.middleCols(h * d, d) = s * v.middleCols(h * d, d);
  }
  Tensor out = x;
  out.matrix(n, c) += merged * p.w_o.matrix(c, c);
  return out;
}

SuiteResult k_attention_suite() {
  Rng rng(21);
  double worst_sum = 0.0, worst_dense = 0.0;
  bool sparse = true;
  for (int instance = 0; instance < 20; ++instance) {
    const std::size_t heads = 1 + rng.below(2), c = heads * (1 + rng.below(3)), n = 1 + rng.below(12);
    const std::size_t k = 1 + rng.below(n);
    KAttentionParams p = KAttentionParams::create(c, heads, k, 0.0, rng);
    Tensor x = random_tensor({1, n, c}, rng);
    Tape tape(Mode::evaluation);
    KAttentionTrace trace;
    k_attention_forward(tape.constant(x), p, rng, &trace);
    for (std::size_t row = 0; row < trace.attention.size() / n; ++row) {
      std::size_t nonzero = 0;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double a = trace.attention[row * n + j];
        nonzero += a != 0.0;
        total += a;
      }
      sparse = sparse && nonzero <= k;
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
    p.topk = n;
    Tape dense_tape(Mode::evaluation);
    Var y = k_attention_forward(dense_tape.constant(x), p, rng);
    worst_dense = std::max(worst_dense, max_abs_diff(y.value(), dense_attention(x, p)));
  }
  bool ok = sparse && worst_sum <= 1e-12 && worst_dense <= 1e-12;
  return {"k_attention", ok, "row sum err " + fmt("%.1e", worst_sum) + ", dense diff " + fmt("%.1e", worst_dense)};
}

SuiteResult residual_suite() {
  Rng rng(31);
  Tensor tokens = random_tensor({2, 6, 4}, rng);
  Tensor grid = random_tensor({2, 4, 2, 3}, rng);
  KAttentionParams attention = KAttentionParams::zeros(4, 2, 3);
  FusionLayerParams fusion = FusionLayerParams::zeros(4);
  Tape tape;
  bool ok = k_attention_forward(tape.input(tokens), attention, rng).value() == tokens &&
            fusion_forward(tape.input(grid), fusion).value() == grid;
  return {"residual", ok, ok ? "zero branches are exact identities" : "zero branch altered its input"};
}

SuiteResult msagf_suite() {
  Rng rng(41);
  bool constant = true, open = true, bounded = true;
  for (int instance = 0; instance < 20; ++instance) {
    const std::size_t c = 4, h = 2 + rng.below(4), w = 2 + rng.below(4);
    MsagfParams p = MsagfParams::create(c, 2, rng);
    Tape tape;
    Var x1 = tape.input(random_tensor({2, c, h, w}, rng, -3, 3));
    Var x2 = tape.input(random_tensor({2, c, h, w}, rng, -3, 3));
    Var wg = global_attention(x1, x2, p);
    Var ws = spatial_attention(x1, x2, p);
    Var fused = gated_fusion(x1, x2, wg, ws);
    constant = constant && wg.shape() == Shape{2, c, 1, 1};
    for (double v : wg.value().data()) open = open && v > 0.0 && v < 1.0;
    for (double v : ws.value().data()) open = open && v > 0.0 && v < 1.0;
    for (std::size_t i = 0; i < fused.value().size(); ++i) {
      bounded = bounded &&
                std::abs(fused.value()[i]) <= std::abs(x1.value()[i]) + std::abs(x2.value()[i]);
    }
  }
  bool ok = constant && open && bounded;
  return {"msagf", ok, ok ? "gates bounded, fused magnitude bounded" : "gate contract violated"};
}

double brute_hd95_directed(const BinaryMask& a, const BinaryMask& b) {
  std::vector<double> d;
  auto from = boundary(a), to = boundary(b);
  for (auto [y, x] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (auto [v, u] : to) {
      double dy = double(y) - double(v), dx = double(x) - double(u);
      best = std::min(best, std::sqrt(dy * dy + dx * dx));
    }
    d.push_back(best);
  }
  return percentile(d, 95.0);
}

SuiteResult metrics_suite() {
  Rng rng(51);
  double worst = 0.0;
  bool exact = true;
  for (int instance = 0; instance < 50; ++instance) {
    BinaryMask a(12, 12), b(12, 12);
    double pa = rng.uniform(0.1, 0.6), pb = rng.uniform(0.1, 0.6);
    for (std::size_t i = 0; i < 144; ++i) {
      a.set(i / 12, i % 12, rng.uniform() < pa);
      b.set(i / 12, i % 12, rng.uniform() < pb);
    }
    if (a.empty() || b.empty()) continue;
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < 144; ++i) inter += a[i] && b[i], uni += a[i] || b[i];
    exact = exact && dice(a, b) == 2.0 * double(inter) / double(a.count() + b.count()) &&
            iou(a, b) == double(inter) / double(uni);
    double expected = std::max(brute_hd95_directed(a, b), brute_hd95_directed(b, a));
    worst = std::max(worst, std::abs(hd95(a, b) - expected));
  }
  bool ok = exact && worst <= 1e-9;
  return {"metrics", ok, "hd95 max diff " + fmt("%.1e", worst)};
}

SuiteResult io_suite() {
  Rng rng(61);
  std::vector<std::uint8_t> pgm = {'P', '5', '\n', '3', ' ', '2', '\n', '2', '5', '5', '\n'};
  for (int i = 0; i < 6; ++i) pgm.push_back(static_cast<std::uint8_t>(rng.below(256)));
  bool ok = encode_pgm(parse_pgm(pgm)) == pgm;

  Checkpoint ck;
  ck.add("a", random_tensor({2, 3}, rng));
  ck.add("b", Tensor::scalar(u64_bits_to_double(rng.next())));
  auto bytes = encode_checkpoint(ck);
  ok = ok && encode_checkpoint(decode_checkpoint(bytes)) == bytes;
  try {
    decode_checkpoint(std::span(bytes).first(bytes.size() - 1));
    ok = false;
  } catch (const ParseError&) {
  }
  return {"io", ok, ok ? "pgm and checkpoint round-trip, truncation rejected" : "round-trip failed"};
}

SuiteResult determinism_suite() {
  RunConfig config;
  config.model = RichUNetConfig::micro();
  config.train.batch_size = 2;
  config.train.seed = 5;
  config.train.learning_rate = 1e-2;
  auto data = synth_dataset(3, 16, 16, 9);

  Trainer first = Trainer::create(config);
  auto log_a = first.run(data, 4);
  Trainer second = Trainer::create(config);
  auto log_b = second.run(data, 2);
  Trainer resumed = Trainer::restore(decode_checkpoint(encode_checkpoint(second.checkpoint())));
  auto tail = resumed.run(data, 4);
  log_b.insert(log_b.end(), tail.begin(), tail.end());

  bool ok = format_log(log_a) == format_log(log_b) &&
            encode_checkpoint(first.checkpoint()) == encode_checkpoint(resumed.checkpoint());
  return {"determinism", ok, ok ? "resumed run matches uninterrupted run" : "runs diverged"};
}

}  // namespace

std::vector<SuiteResult> run_selftest(std::ostream& out) {
  const std::vector<std::pair<const char*, SuiteResult (*)()>> suites = {
      {"gradients", gradient_suite}, {"k_attention", k_attention_suite}, {"residual", residual_suite},
      {"msagf", msagf_suite},         {"metrics", metrics_suite},         {"io", io_suite},
      {"determinism", determinism_suite}};
  std::vector<SuiteResult> results;
  for (const auto& [name, suite] : suites) {
    SuiteResult r{name, false, ""};
    try {
      r = suite();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace richunet

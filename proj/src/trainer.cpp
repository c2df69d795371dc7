#include "richunet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "richunet/error.hpp"
#include "richunet/loss.hpp"
#include "richunet/metrics.hpp"
#include "richunet/ops.hpp"

namespace richunet {

namespace {

constexpr std::uint64_t kDropoutStream = 0x6a09e667f3bcc909ULL;
constexpr std::uint64_t kShuffleStream = 0xbb67ae8584caa73bULL;

}  // namespace

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t batch_size,
                                       std::size_t dataset_size) {
  if (dataset_size == 0) throw ShapeError("batch_indices: empty dataset");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::size_t pos = step * batch_size + j;
    const std::size_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::uint64_t mix = seed ^ kShuffleStream;
      mix += epoch;
      Rng rng(splitmix64(mix));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = dataset_size; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

Tensor stack_images(const std::vector<SegmentationSample>& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("stack_images: no samples");
  const Shape first = data.at(indices[0]).image.shape();
  if (first.size() != 3 || first[0] != 1) throw ShapeError("stack_images: images must be [1,H,W]");
  const std::size_t plane = first[1] * first[2];
  Tensor out({indices.size(), 1, first[1], first[2]});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& img = data.at(indices[b]).image;
    if (img.shape() != first) throw ShapeError("stack_images: image extents differ within a batch");
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<long>(b * plane));
  }
  return out;
}

Trainer::Trainer(RunConfig config, RichUNet net)
    : config_(std::move(config)), net_(std::move(net)), adam_(config_.train.adam()) {
  config_.train.validate();
  std::uint64_t mix = config_.train.seed ^ kDropoutStream;
  rng_.reseed(splitmix64(mix));
}

Trainer Trainer::create(const RunConfig& config) {
  Rng init(config.train.seed);
  return Trainer(config, RichUNet::build(config.model, init));
}

Checkpoint Trainer::checkpoint() {
  Checkpoint ck;
  store_config(config_, ck);
  ck.add("train.step", Tensor({1}, {static_cast<double>(adam_.steps())}));
  std::vector<double> state;
  for (std::uint64_t w : rng_.state()) state.push_back(u64_bits_to_double(w));
  ck.add("train.rng_state", Tensor({4}, std::move(state)));
  net_.visit([&](const std::string& name, Tensor& t, bool) { ck.add("param." + name, t); });
  net_.visit([&](const std::string& name, Tensor& t, bool trainable) {
    if (!trainable) return;
    auto& m = adam_.first_moments();
    auto& v = adam_.second_moments();
    auto mi = m.find(name);
    auto vi = v.find(name);
    ck.add("adam.m." + name, mi == m.end() ? Tensor::zeros(t.shape()) : mi->second);
    ck.add("adam.v." + name, vi == v.end() ? Tensor::zeros(t.shape()) : vi->second);
  });
  return ck;
}

Trainer Trainer::restore(const Checkpoint& ck) {
  const RunConfig config = restore_config(ck);
  config.model.validate();
  Rng scratch(0);
  Trainer trainer(config, RichUNet::build(config.model, scratch));
  auto copy_into = [&](const std::string& key, Tensor& dst) {
    const Tensor& src = ck.get(key);
    if (src.shape() != dst.shape()) {
      throw ParseError("checkpoint: entry '" + key + "' has shape " + to_string(src.shape()) + ", expected " +
                       to_string(dst.shape()), 0);
    }
    dst = src;
  };
  trainer.net_.visit([&](const std::string& name, Tensor& t, bool trainable) {
    copy_into("param." + name, t);
    if (!trainable) return;
    Tensor m = Tensor::zeros(t.shape());
    Tensor v = Tensor::zeros(t.shape());
    copy_into("adam.m." + name, m);
    copy_into("adam.v." + name, v);
    trainer.adam_.first_moments()[name] = std::move(m);
    trainer.adam_.second_moments()[name] = std::move(v);
  });
  trainer.adam_.set_steps(static_cast<std::size_t>(ck.get("train.step").item()));
  const Tensor& state = ck.get("train.rng_state");
  if (state.size() != 4) throw ParseError("checkpoint: train.rng_state needs 4 words", 0);
  Rng::State words{};
  for (std::size_t i = 0; i < 4; ++i) words[i] = double_bits_to_u64(state[i]);
  trainer.rng_.set_state(words);
  return trainer;
}

StepRecord Trainer::step(const std::vector<SegmentationSample>& data) {
  const std::size_t index = adam_.steps();
  const auto indices = batch_indices(config_.train.seed, index, config_.train.batch_size, data.size());
  std::vector<BinaryMask> targets;
  targets.reserve(indices.size());
  for (std::size_t i : indices) targets.push_back(data[i].mask);

  Tape tape(Mode::training);
  Var x = tape.constant(stack_images(data, indices));
  Var logits = net_.forward(x, rng_);
  Var loss = segmentation_loss(logits, targets, config_.train.loss_lambda);
  const double loss_value = loss.value().item();
  if (!std::isfinite(loss_value)) {
    throw NumericalError("non-finite loss at step " + std::to_string(index + 1));
  }
  Gradients grads = backward(tape, loss);
  adam_.step(net_, grads);

  const Tensor& out = logits.value();
  const std::size_t k = out.dim(1), plane = k * out.dim(2) * out.dim(3);
  double dice_sum = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    Tensor item({k, out.dim(2), out.dim(3)});
    std::copy_n(out.data().begin() + static_cast<long>(b * plane), plane, item.data().begin());
    dice_sum += dice(argmax_mask(item), targets[b]);
  }
  return {adam_.steps(), loss_value, dice_sum / static_cast<double>(targets.size())};
}

std::vector<StepRecord> Trainer::run(const std::vector<SegmentationSample>& data, std::size_t until,
                                     const std::function<void(Trainer&, const StepRecord&)>& on_step) {
  std::vector<StepRecord> log;
  while (adam_.steps() < until) {
    log.push_back(step(data));
    if (on_step) on_step(*this, log.back());
  }
  return log;
}

std::string format_log(const std::vector<StepRecord>& log) {
  std::string out = "step,loss,dice\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", r.step, r.loss, r.dice);
    out += buf;
  }
  return out;
}

}  // namespace richunet

#include "richunet/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "richunet/error.hpp"
#include "richunet/ops.hpp"

namespace richunet {

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

EvaluationReport evaluate(const std::vector<SegmentationSample>& data, const Predictor& predict) {
  EvaluationReport report;
  double hd_sum = 0.0;
  std::size_t hd_count = 0;
  for (const auto& sample : data) {
    const BinaryMask pred = predict(sample);
    SampleScore row;
    row.id = sample.id;
    row.dice = dice(pred, sample.mask);
    row.iou = iou(pred, sample.mask);
    try {
      row.hd95 = hd95(pred, sample.mask);
      row.hd95_defined = true;
      hd_sum += row.hd95;
      ++hd_count;
    } catch (const MetricUndefined&) {
      row.hd95 = std::numeric_limits<double>::quiet_NaN();
      ++report.hd95_undefined;
    }
    report.mean_dice += row.dice;
    report.mean_iou += row.iou;
    report.rows.push_back(std::move(row));
  }
  if (!data.empty()) {
    report.mean_dice /= static_cast<double>(data.size());
    report.mean_iou /= static_cast<double>(data.size());
  }
  report.mean_hd95 = hd_count ? hd_sum / static_cast<double>(hd_count) : std::numeric_limits<double>::quiet_NaN();
  return report;
}

BinaryMask predict_mask(RichUNet& net, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("predict_mask: expected [C,H,W], got " + to_string(image.shape()));
  Tape tape(Mode::evaluation);
  Rng unused(0);
  Var x = tape.constant(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
  const Tensor& logits = net.forward(x, unused).value();
  return argmax_mask(logits.reshaped({logits.dim(1), logits.dim(2), logits.dim(3)}));
}

EvaluationReport evaluate(RichUNet& net, const std::vector<SegmentationSample>& data) {
  return evaluate(data, [&](const SegmentationSample& s) { return predict_mask(net, s.image); });
}

std::string EvaluationReport::to_csv() const {
  std::string out = "id,dice,iou,hd95,hd95_defined\n";
  for (const auto& r : rows) {
    out += r.id + "," + fmt(r.dice) + "," + fmt(r.iou) + "," + fmt(r.hd95) + "," + (r.hd95_defined ? "1" : "0") + "\n";
  }
  out += "mean," + fmt(mean_dice) + "," + fmt(mean_iou) + "," + fmt(mean_hd95) + "," +
         std::to_string(rows.size() - hd95_undefined) + "\n";
  return out;
}

std::string EvaluationReport::to_text() const {
  std::string out;
  out += "reference (ISIC2018, full-scale): Dice 0.9116  IoU 0.8397  HD95 1.7637\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %10s %10s %10s\n", "id", "dice", "iou", "hd95");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %10s %10s %10s%s\n", r.id.c_str(), fmt(r.dice).c_str(),
                  fmt(r.iou).c_str(), fmt(r.hd95).c_str(), r.hd95_defined ? "" : "  (hd95 undefined)");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-24s %10s %10s %10s\n", "mean", fmt(mean_dice).c_str(), fmt(mean_iou).c_str(),
                fmt(mean_hd95).c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf), "hd95 undefined for %zu of %zu samples\n", hd95_undefined, rows.size());
  out += buf;
  return out;
}

}  // namespace richunet

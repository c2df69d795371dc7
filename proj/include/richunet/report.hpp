#pragma once

#include <functional>
#include <string>
#include <vector>

#include "richunet/dataset.hpp"
#include "richunet/network.hpp"

namespace richunet {

struct SampleScore {
  std::string id;
  double dice = 0.0;
  double iou = 0.0;
  double hd95 = 0.0;  ///< NaN when undefined
  bool hd95_defined = false;
};

struct EvaluationReport {
  std::vector<SampleScore> rows;
  double mean_dice = 0.0;
  double mean_iou = 0.0;
  double mean_hd95 = 0.0;  ///< over defined rows only; NaN if none
  std::size_t hd95_undefined = 0;

  /// Columns: id,dice,iou,hd95,hd95_defined; a final "mean" row carries the
  /// column means and the number of defined HD95 values.
  std::string to_csv() const;
  /// Aligned table with the reference header.
  std::string to_text() const;
};

using Predictor = std::function<BinaryMask(const SegmentationSample&)>;

EvaluationReport evaluate(const std::vector<SegmentationSample>& data, const Predictor& predict);
/// Evaluation-mode forward, argmax over classes.
EvaluationReport evaluate(RichUNet& net, const std::vector<SegmentationSample>& data);
BinaryMask predict_mask(RichUNet& net, const Tensor& image);

}  // namespace richunet

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "richunet/metrics.hpp"
#include "richunet/tensor.hpp"

namespace richunet {

struct Ellipse {
  double cy = 0, cx = 0;  ///< centre, pixel units
  double ry = 1, rx = 1;  ///< semi-axes
  double theta = 0;       ///< rotation, radians

  /// ((dx cos t + dy sin t)/rx)^2 + ((-dx sin t + dy cos t)/ry)^2 <= 1
  bool contains(double y, double x) const;
};

struct SegmentationSample {
  std::string id;
  Tensor image;  ///< [1,H,W], values in [0,1]
  BinaryMask mask;
  /// Generating shapes for synthetic samples; empty for loaded data.
  std::vector<Ellipse> shapes;
};

/// 1-3 anti-aliased ellipses on a noisy background. The mask is exactly the
/// union of ellipse interiors evaluated at pixel centres (y, x). Every mask
/// is non-empty with at most 60% foreground. Deterministic per seed.
std::vector<SegmentationSample> synth_dataset(std::size_t count, std::size_t height, std::size_t width,
                                              std::uint64_t seed);

/// Reads DIR/images/<id>.pgm and DIR/masks/<id>.pgm pairs, sorted by id.
std::vector<SegmentationSample> load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::vector<SegmentationSample>& samples, const std::filesystem::path& dir);

}  // namespace richunet

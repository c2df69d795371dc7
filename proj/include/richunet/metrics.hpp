#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "richunet/tensor.hpp"

namespace richunet {

/// Binary (H,W) mask, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width) : height_(height), width_(width), data_(height * width, 0) {}
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x] != 0; }
  void set(std::size_t y, std::size_t x, bool on) { data_[y * width_ + x] = on ? 1 : 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  const std::vector<std::uint8_t>& data() const { return data_; }

  /// Foreground where value >= 0.5; `t` is [H,W] or [1,H,W].
  static BinaryMask from_tensor(const Tensor& t);
  /// [1,H,W] with values 0/1.
  Tensor to_tensor() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Foreground = argmax over the class axis is non-zero. logits: [K,H,W].
BinaryMask argmax_mask(const Tensor& logits);

/// 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);
/// |A∩B| / |A∪B|; 1 when both masks are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

using Pixel = std::pair<std::size_t, std::size_t>;  // (y, x)

/// Foreground pixels with a 4-neighbour that is background or outside the
/// image, in row-major order.
std::vector<Pixel> boundary(const BinaryMask& mask);

/// Linear interpolation between closest ranks; `values` need not be sorted.
double percentile(std::vector<double> values, double q);

/// 95th percentile of boundary(from) -> boundary(to) nearest distances.
double directed_hd95(const BinaryMask& from, const BinaryMask& to);
/// max of both directed values. Throws MetricUndefined if a mask is empty.
double hd95(const BinaryMask& pred, const BinaryMask& gt);

}  // namespace richunet

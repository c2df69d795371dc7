#include "richunet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "richunet/error.hpp"

namespace richunet {

namespace {

void require_same(const char* op, const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(op) + ": mask shapes " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " and " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + " differ");
  }
}

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const BinaryMask& a, const BinaryMask& b) {
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    o.a += a[i];
    o.b += b[i];
    o.both += a[i] && b[i];
  }
  return o;
}

// Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher),
// one dimension at a time. Integer-valued squared distances are exact in double.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::size_t n) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = 0;
  while (first < n && f[first] == inf) ++first;
  if (first == n) {
    std::fill(d.begin(), d.begin() + static_cast<long>(n), inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == inf) continue;
    const double qd = static_cast<double>(q);
    double s;
    while (true) {
      const double vd = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vd * vd)) / (2.0 * qd - 2.0 * vd);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

// Squared distance from every pixel to the nearest source pixel.
std::vector<double> squared_distance_map(const std::vector<Pixel>& sources, std::size_t h, std::size_t w) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(h * w, inf);
  for (auto [y, x] : sources) grid[y * w + x] = 0.0;
  std::vector<double> f(std::max(h, w)), d(std::max(h, w));
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    edt_1d(f, d, h);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
    edt_1d(f, d, w);
    for (std::size_t x = 0; x < w; ++x) grid[y * w + x] = d[x];
  }
  return grid;
}

}  // namespace

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != height * width) throw ShapeError("BinaryMask: data length does not match extents");
  for (auto& v : data_) {
    if (v > 1) throw ShapeError("BinaryMask: values must be 0 or 1");
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::from_tensor(const Tensor& t) {
  std::size_t h = 0, w = 0;
  if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.rank() == 3 && t.dim(0) == 1) {
    h = t.dim(1);
    w = t.dim(2);
  } else {
    throw ShapeError("BinaryMask::from_tensor: expected [H,W] or [1,H,W], got " + to_string(t.shape()));
  }
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m.data_[i] = t[i] >= 0.5 ? 1 : 0;
  return m;
}

Tensor BinaryMask::to_tensor() const {
  Tensor t({1, height_, width_});
  for (std::size_t i = 0; i < data_.size(); ++i) t[i] = data_[i];
  return t;
}

BinaryMask argmax_mask(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("argmax_mask: expected [K,H,W], got " + to_string(logits.shape()));
  const std::size_t k = logits.dim(0), h = logits.dim(1), w = logits.dim(2), hw = h * w;
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c * hw + i] > logits[best * hw + i]) best = c;
    }
    m.set(i / w, i % w, best != 0);
  }
  return m;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same("dice", pred, gt);
  const Overlap o = overlap(pred, gt);
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  require_same("iou", pred, gt);
  const Overlap o = overlap(pred, gt);
  const std::size_t uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

std::vector<Pixel> boundary(const BinaryMask& mask) {
  const std::size_t h = mask.height(), w = mask.width();
  std::vector<Pixel> out;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || !mask(y - 1, x) || !mask(y + 1, x) ||
                        !mask(y, x - 1) || !mask(y, x + 1);
      if (edge) out.emplace_back(y, x);
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw MetricUndefined("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double directed_hd95(const BinaryMask& from, const BinaryMask& to) {
  require_same("hd95", from, to);
  const auto src = boundary(from);
  const auto dst = boundary(to);
  if (src.empty() || dst.empty()) throw MetricUndefined("hd95 is undefined for an empty mask");
  const auto dist2 = squared_distance_map(dst, to.height(), to.width());
  std::vector<double> d;
  d.reserve(src.size());
  for (auto [y, x] : src) d.push_back(std::sqrt(dist2[y * to.width() + x]));
  return percentile(std::move(d), 95.0);
}

double hd95(const BinaryMask& pred, const BinaryMask& gt) {
  require_same("hd95", pred, gt);
  if (pred.empty() || gt.empty()) throw MetricUndefined("hd95 is undefined for an empty mask");
  return std::max(directed_hd95(pred, gt), directed_hd95(gt, pred));
}

}  // namespace richunet

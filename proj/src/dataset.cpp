#include "richunet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "richunet/error.hpp"
#include "richunet/pgm.hpp"
#include "richunet/rng.hpp"

namespace richunet {

namespace {

constexpr double kNoiseSigma = 0.1;
constexpr double kMaxForeground = 0.6;
constexpr int kSupersample = 4;

}  // namespace

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy, dx = x - cx;
  const double c = std::cos(theta), s = std::sin(theta);
  const double u = (dx * c + dy * s) / rx;
  const double v = (-dx * s + dy * c) / ry;
  return u * u + v * v <= 1.0;
}

std::vector<SegmentationSample> synth_dataset(std::size_t count, std::size_t height, std::size_t width,
                                              std::uint64_t seed) {
  if (height < 8 || width < 8) throw ShapeError("synth_dataset: extents must be at least 8x8");
  Rng rng(seed);
  std::vector<SegmentationSample> out;
  out.reserve(count);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double min_extent = std::min(h, w);

  for (std::size_t n = 0; n < count; ++n) {
    SegmentationSample sample;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%04zu", n);
    sample.id = id;

    // Redraw until the mask satisfies the coverage contract.
    while (true) {
      sample.shapes.clear();
      const std::size_t shapes = 1 + rng.below(3);
      for (std::size_t k = 0; k < shapes; ++k) {
        Ellipse e;
        e.ry = rng.uniform(0.08, 0.25) * min_extent;
        e.rx = rng.uniform(0.08, 0.25) * min_extent;
        e.cy = rng.uniform(0.15, 0.85) * h;
        e.cx = rng.uniform(0.15, 0.85) * w;
        e.theta = rng.uniform(0.0, std::numbers::pi);
        sample.shapes.push_back(e);
      }
      sample.mask = BinaryMask(height, width);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const bool inside = std::any_of(sample.shapes.begin(), sample.shapes.end(), [&](const Ellipse& e) {
            return e.contains(static_cast<double>(y), static_cast<double>(x));
          });
          sample.mask.set(y, x, inside);
        }
      }
      const std::size_t fg = sample.mask.count();
      if (fg > 0 && static_cast<double>(fg) <= kMaxForeground * static_cast<double>(height * width)) break;
    }

    const double background = rng.uniform(0.15, 0.35);
    const double foreground = rng.uniform(0.65, 0.85);
    sample.image = Tensor({1, height, width});
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        // Coverage from a kSupersample^2 grid inside the pixel centred on (y, x).
        int hits = 0;
        for (int sy = 0; sy < kSupersample; ++sy) {
          for (int sx = 0; sx < kSupersample; ++sx) {
            const double py = static_cast<double>(y) - 0.5 + (sy + 0.5) / kSupersample;
            const double px = static_cast<double>(x) - 0.5 + (sx + 0.5) / kSupersample;
            const bool inside = std::any_of(sample.shapes.begin(), sample.shapes.end(),
                                            [&](const Ellipse& e) { return e.contains(py, px); });
            hits += inside ? 1 : 0;
          }
        }
        const double coverage = static_cast<double>(hits) / (kSupersample * kSupersample);
        const double v = background + (foreground - background) * coverage + kNoiseSigma * rng.normal();
        sample.image[y * width + x] = std::clamp(v, 0.0, 1.0);
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<SegmentationSample> load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path images = dir / "images";
  const fs::path masks = dir / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw ParseError("dataset " + dir.string() + " needs images/ and masks/ subdirectories", 0);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ParseError("dataset " + dir.string() + " contains no images", 0);
  std::vector<SegmentationSample> out;
  for (const auto& file : files) {
    SegmentationSample s;
    s.id = file.stem().string();
    s.image = load_pgm(file);
    s.mask = load_mask_pgm(masks / file.filename());
    if (s.mask.height() != s.image.dim(1) || s.mask.width() != s.image.dim(2)) {
      throw ShapeError("dataset sample " + s.id + ": image and mask extents differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const std::vector<SegmentationSample>& samples, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (const auto& s : samples) {
    save_pgm(s.image, dir / "images" / (s.id + ".pgm"));
    save_mask_pgm(s.mask, dir / "masks" / (s.id + ".pgm"));
  }
}

}  // namespace richunet

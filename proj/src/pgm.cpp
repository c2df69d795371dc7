#include "richunet/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "richunet/error.hpp"

namespace richunet {

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (is_space(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t read_uint(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000) throw ParseError(std::string("pgm: ") + field + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw ParseError(std::string("pgm: expected ") + field + (pos_ >= bytes_.size() ? " (truncated header)" : ""),
                       start);
    }
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Tensor parse_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("pgm: expected magic \"P5\"", 0);
  HeaderReader r(bytes);
  const std::size_t width = r.read_uint("width");
  const std::size_t height = r.read_uint("height");
  r.skip_space_and_comments();
  const std::size_t maxval_at = r.pos();
  const std::size_t maxval = r.read_uint("maxval");
  if (maxval != 255) throw ParseError("pgm: maxval must be 255, got " + std::to_string(maxval), maxval_at);
  if (width == 0 || height == 0) throw ParseError("pgm: zero image extent", maxval_at);
  if (r.pos() >= bytes.size() || !is_space(bytes[r.pos()])) {
    throw ParseError("pgm: expected whitespace after maxval", r.pos());
  }
  r.advance();
  const std::size_t payload = r.pos();
  const std::size_t expected = width * height;
  if (bytes.size() - payload < expected) {
    throw ParseError("pgm: truncated payload, expected " + std::to_string(expected) + " bytes", bytes.size());
  }
  if (bytes.size() - payload > expected) throw ParseError("pgm: trailing data", payload + expected);
  Tensor image({1, height, width});
  for (std::size_t i = 0; i < expected; ++i) image[i] = static_cast<double>(bytes[payload + i]) / 255.0;
  return image;
}

std::vector<std::uint8_t> encode_pgm(const Tensor& image) {
  std::size_t h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw ShapeError("encode_pgm: expected [H,W] or [1,H,W], got " + to_string(image.shape()));
  }
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::floor(image[i] * 255.0 + 0.5);
    out.push_back(static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

Tensor load_pgm(const std::filesystem::path& path) { return parse_pgm(read_file(path)); }

void save_pgm(const Tensor& image, const std::filesystem::path& path) { write_file(path, encode_pgm(image)); }

void save_mask_pgm(const BinaryMask& mask, const std::filesystem::path& path) {
  save_pgm(mask.to_tensor(), path);
}

BinaryMask load_mask_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const Tensor t = parse_pgm(bytes);
  const std::size_t payload = bytes.size() - t.size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) throw ParseError("mask " + path.string() + " is not binary 0/255", payload + i);
  }
  return BinaryMask::from_tensor(t);
}

}  // namespace richunet

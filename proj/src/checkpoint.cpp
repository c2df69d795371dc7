#include "richunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <limits>

#include "richunet/error.hpp"
#include "richunet/pgm.hpp"

namespace richunet {

namespace {

constexpr char kMagic[4] = {'R', 'U', 'N', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw ShapeError(std::string("checkpoint: ") + what + " too large");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("checkpoint: truncated ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n, "entry name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double u64_bits_to_double(std::uint64_t v) { return std::bit_cast<double>(v); }
std::uint64_t double_bits_to_u64(double v) { return std::bit_cast<std::uint64_t>(v); }

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw ParseError("checkpoint: missing entry '" + name + "'", 0);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, narrow(checkpoint.entries.size(), "entry count"));
  for (const auto& [name, tensor] : checkpoint.entries) {
    put_u32(out, narrow(name.size(), "name"));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, narrow(tensor.rank(), "rank"));
    for (std::size_t d : tensor.shape()) put_u32(out, narrow(d, "dimension"));
    for (double v : tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("checkpoint: bad magic, expected \"RUN1\"", 0);
  }
  Reader r(bytes.subspan(0));
  r.str(4);
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32("entry count");
  Checkpoint out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = r.u32("name length");
    std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32("rank");
    r.need(std::size_t{rank} * 4, "dims");
    Shape shape(rank);
    std::size_t elements = 1;
    for (auto& d : shape) {
      d = r.u32("dims");
      elements *= d;
      if (elements > r.remaining()) r.need(elements * 8, "payload");
    }
    r.need(elements * 8, "payload");
    std::vector<double> data(elements);
    for (auto& v : data) v = std::bit_cast<double>(r.u64("payload"));
    out.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw ParseError("checkpoint: trailing bytes after last entry", r.pos());
  return out;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace richunet

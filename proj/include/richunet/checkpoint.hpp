#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "richunet/tensor.hpp"

namespace richunet {

/// Ordered list of named float64 arrays.
///
/// Binary layout, little-endian:
///   "RUN1" | version u32 | entry count u32 |
///   per entry: name length u32, name bytes, rank u32, dims u32[rank],
///              float64 payload[prod(dims)]
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor>> entries;

  void add(std::string name, Tensor value) { entries.emplace_back(std::move(name), std::move(value)); }
  /// Throws ParseError (offset 0) if missing.
  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Validates magic, version, every length field and the total size; nothing
/// is returned on failure.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Bit-exact u64 <-> double packing for RNG state and seeds.
double u64_bits_to_double(std::uint64_t v);
std::uint64_t double_bits_to_u64(double v);

}  // namespace richunet

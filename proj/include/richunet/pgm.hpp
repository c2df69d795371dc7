#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "richunet/metrics.hpp"
#include "richunet/tensor.hpp"

namespace richunet {

/// Parses a binary "P5" greymap with maxval 255 into [1,H,W] values in [0,1].
/// Throws ParseError with the byte offset of the first problem.
Tensor parse_pgm(std::span<const std::uint8_t> bytes);
/// Writes "P5\n<W> <H>\n255\n" + pixels, value v stored as floor(255 v + 0.5) clamped.
std::vector<std::uint8_t> encode_pgm(const Tensor& image);

Tensor load_pgm(const std::filesystem::path& path);
void save_pgm(const Tensor& image, const std::filesystem::path& path);
/// Masks are stored as 0/255.
void save_mask_pgm(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask load_mask_pgm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace richunet

#pragma once

#include "fvig/tensor.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace fvig {

/// Decodes a binary PPM (P6) into a [3, H, W] tensor scaled to [0, 1].
/// Supports maxval up to 65535 (two big-endian bytes per sample above 255).
/// Throws FormatError on a malformed or truncated file.
Tensor decode_ppm(std::span<const unsigned char> bytes);
Tensor read_ppm(const std::filesystem::path& path);

/// Encodes a [3, H, W] tensor in [0, 1] as P6 with maxval 255 (rounded, clamped).
std::vector<unsigned char> encode_ppm(const Tensor& image);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resize of a [C, H, W] image using pixel-centre alignment.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace fvig

#pragma once

#include <cstdint>
#include <string>

#include "fga/tensor.hpp"

namespace fga {

/// Raw tensor container "FGAT": magic bytes F G A T, u32 version = 1,
/// u8 dtype (0 = 32-bit float), u8 ndim, ndim x u64 extents, then the
/// row-major payload. All integers and floats little-endian. Values are
/// narrowed to 32-bit on write and widened back on read.
void write_fgat(const std::string& path, const Tensor& t);
Tensor read_fgat(const std::string& path);

/// 8-bit PNG decode to C x H x W values in [0, 1]; C is 1 (grayscale) or 3
/// (RGB). Palette and 16-bit inputs are normalized to 8-bit, alpha dropped.
Tensor read_png(const std::string& path);

/// Encode [H, W] or C x H x W (C = 1 or 3) to 8-bit PNG; values are clamped
/// to [0, 1] and rounded to the nearest of the 256 levels.
void write_png(const std::string& path, const Tensor& img);

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B. Input 3 x H x W, output H x W.
/// A 1 x H x W or H x W input passes through unchanged (already single-plane).
Tensor luminance(const Tensor& img);

/// FNV-1a 64-bit hash of a file's bytes, as a 16-digit lowercase hex string.
std::string fnv1a64_file_hex(const std::string& path);

}  // namespace fga

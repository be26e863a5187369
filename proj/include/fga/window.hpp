#pragma once

#include "fga/tensor.hpp"

namespace fga {

/// One spatial window cut from a source tensor. `row` / `col` are the origin
/// of the block in source coordinates; with overlapping partitions the origin
/// can be negative (the block then starts inside the reflection padding).
struct WindowBlock {
  Tensor block;
  std::int64_t row = 0;
  std::int64_t col = 0;
};

/// Result of window_partition. Blocks are ordered row-major over the window
/// grid and all share identical extents.
struct WindowSet {
  std::vector<WindowBlock> windows;
  std::int64_t window_h = 0;
  std::int64_t window_w = 0;
  std::int64_t stride_h = 0;
  std::int64_t stride_w = 0;
  std::int64_t grid_rows = 0;
  std::int64_t grid_cols = 0;
  std::vector<std::int64_t> source_shape;
};

/// Cut the two trailing spatial dims into windows of size (wh, ww) taken at
/// stride (sh, sw), sh <= wh and sw <= ww. The source is reflection-padded so
/// every stride step yields a full window: ceil(H/sh) x ceil(W/sw) windows,
/// centred when the stride is smaller than the window. With stride == window
/// this is the plain non-overlapping tiling (padding only bottom/right).
WindowSet window_partition(const Tensor& x, std::int64_t wh, std::int64_t ww, std::int64_t sh,
                           std::int64_t sw);

/// Reassemble a non-overlapping partition (stride == window). Exact inverse
/// of window_partition for that mode.
Tensor window_merge(const WindowSet& ws);

/// Enlarged LR-side attention window M_O = round((1 + alpha) * lr_window).
std::int64_t owca_window_size(std::int64_t lr_window, double alpha);

}  // namespace fga

#include "fga/window.hpp"

#include <algorithm>
#include <cmath>

#include "fga/ops.hpp"

namespace fga {

WindowSet window_partition(const Tensor& x, std::int64_t wh, std::int64_t ww, std::int64_t sh,
                           std::int64_t sw) {
  if (x.rank() < 2) throw ShapeError("window_partition: need at least 2 dims");
  if (wh < 1 || ww < 1 || sh < 1 || sw < 1) throw ShapeError("window_partition: window/stride must be >= 1");
  if (sh > wh || sw > ww) throw ShapeError("window_partition: stride must not exceed window");
  const std::int64_t h = x.extent(x.rank() - 2);
  const std::int64_t w = x.extent(x.rank() - 1);

  const std::int64_t rows = (h + sh - 1) / sh;
  const std::int64_t cols = (w + sw - 1) / sw;
  const std::int64_t pad_top = (wh - sh) / 2;
  const std::int64_t pad_left = (ww - sw) / 2;
  const std::int64_t pad_bottom = (rows - 1) * sh + wh - pad_top - h;
  const std::int64_t pad_right = (cols - 1) * sw + ww - pad_left - w;
  const Tensor padded = reflection_pad2d(x, pad_top, pad_bottom, pad_left, pad_right);

  WindowSet ws;
  ws.window_h = wh;
  ws.window_w = ww;
  ws.stride_h = sh;
  ws.stride_w = sw;
  ws.grid_rows = rows;
  ws.grid_cols = cols;
  ws.source_shape = x.shape();
  ws.windows.reserve(static_cast<std::size_t>(rows * cols));

  const std::int64_t ph = padded.extent(padded.rank() - 2);
  const std::int64_t pw = padded.extent(padded.rank() - 1);
  const std::int64_t planes = padded.numel() / (ph * pw);
  std::vector<std::int64_t> bshape = x.shape();
  bshape[bshape.size() - 2] = wh;
  bshape[bshape.size() - 1] = ww;

  for (std::int64_t gr = 0; gr < rows; ++gr) {
    for (std::int64_t gc = 0; gc < cols; ++gc) {
      const std::int64_t r0 = gr * sh;
      const std::int64_t c0 = gc * sw;
      WindowBlock wb;
      wb.row = r0 - pad_top;
      wb.col = c0 - pad_left;
      wb.block = Tensor(bshape);
      for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = padded.data() + p * ph * pw;
        double* dst = wb.block.data() + p * wh * ww;
        for (std::int64_t i = 0; i < wh; ++i)
          for (std::int64_t j = 0; j < ww; ++j) dst[i * ww + j] = src[(r0 + i) * pw + (c0 + j)];
      }
      ws.windows.push_back(std::move(wb));
    }
  }
  return ws;
}

Tensor window_merge(const WindowSet& ws) {
  if (ws.stride_h != ws.window_h || ws.stride_w != ws.window_w) {
    throw ShapeError("window_merge: only non-overlapping partitions can be merged");
  }
  if (ws.windows.empty() || ws.source_shape.size() < 2) throw ShapeError("window_merge: empty window set");
  const std::int64_t h = ws.source_shape[ws.source_shape.size() - 2];
  const std::int64_t w = ws.source_shape[ws.source_shape.size() - 1];
  const std::int64_t ph = ws.grid_rows * ws.window_h;
  const std::int64_t pw = ws.grid_cols * ws.window_w;

  std::vector<std::int64_t> pshape = ws.source_shape;
  pshape[pshape.size() - 2] = ph;
  pshape[pshape.size() - 1] = pw;
  Tensor padded(pshape);
  const std::int64_t planes = padded.numel() / (ph * pw);

  for (const WindowBlock& wb : ws.windows) {
    if (!std::equal(wb.block.shape().begin(), wb.block.shape().end() - 2, ws.source_shape.begin())) {
      throw ShapeError("window_merge: block leading extents disagree with source");
    }
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* src = wb.block.data() + p * ws.window_h * ws.window_w;
      double* dst = padded.data() + p * ph * pw;
      for (std::int64_t i = 0; i < ws.window_h; ++i)
        for (std::int64_t j = 0; j < ws.window_w; ++j)
          dst[(wb.row + i) * pw + (wb.col + j)] = src[i * ws.window_w + j];
    }
  }
  return crop2d(padded, 0, ph - h, 0, pw - w);
}

std::int64_t owca_window_size(std::int64_t lr_window, double alpha) {
  if (lr_window < 1) throw ConfigError("owca_window_size: base window must be >= 1");
  if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("owca_window_size: alpha must lie in [0, 1)");
  return static_cast<std::int64_t>(std::llround((1.0 + alpha) * static_cast<double>(lr_window)));
}

}  // namespace fga

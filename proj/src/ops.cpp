#include "fga/ops.hpp"

#include <algorithm>
#include <utility>

namespace fga {

namespace {

// Ops below run on the N x C x H x W interpretation; lower-rank inputs get
// leading extents of 1 and the result is reshaped back.
std::vector<std::int64_t> lift4(const std::vector<std::int64_t>& s, const char* op) {
  if (s.size() > 4 || s.size() < 2) {
    throw ShapeError(std::string(op) + ": expected 2-D..4-D input");
  }
  std::vector<std::int64_t> out(4 - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

Tensor reshaped(Tensor t, std::vector<std::int64_t> shape) {
  return Tensor(std::move(shape), std::move(t.values()));
}

std::vector<std::int64_t> drop_leading(const std::vector<std::int64_t>& s, std::size_t rank) {
  return std::vector<std::int64_t>(s.begin() + (s.size() - rank), s.end());
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  // Mirror without repeating the edge sample.
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride,
              std::int64_t padding) {
  const std::size_t in_rank = x.shape().size();
  const auto s4 = lift4(x.shape(), "conv2d");
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be Cout x Cin x kh x kw");
  const std::int64_t n_n = s4[0], c_in = s4[1], h = s4[2], w = s4[3];
  const std::int64_t c_out = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
  if (weight.extent(1) != c_in) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.extent(1)) + " input channels, got " +
                     std::to_string(c_in));
  }
  if (bias.rank() != 1 || bias.extent(0) != c_out) throw ShapeError("conv2d: bias length must equal Cout");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  const std::int64_t span_h = h + 2 * padding - kh;
  const std::int64_t span_w = w + 2 * padding - kw;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d: output extent is not integral for input " + x.shape_str());
  }
  const std::int64_t oh = span_h / stride + 1;
  const std::int64_t ow = span_w / stride + 1;

  Tensor xpad({n_n, c_in, h + 2 * padding, w + 2 * padding});
  Tensor x4 = reshaped(x, s4);
  for (std::int64_t n = 0; n < n_n; ++n)
    for (std::int64_t c = 0; c < c_in; ++c)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) xpad.at(n, c, i + padding, j + padding) = x4.at(n, c, i, j);

  Tensor out({n_n, c_out, oh, ow});
  for (std::int64_t n = 0; n < n_n; ++n) {
    for (std::int64_t co = 0; co < c_out; ++co) {
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) out.at(n, co, i, j) = bias[co];
      // Shift-and-add accumulation over kernel taps.
      for (std::int64_t ci = 0; ci < c_in; ++ci) {
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const double wv = weight.at(co, ci, ky, kx);
            if (wv == 0.0) continue;
            for (std::int64_t i = 0; i < oh; ++i) {
              for (std::int64_t j = 0; j < ow; ++j) {
                out.at(n, co, i, j) += wv * xpad.at(n, ci, i * stride + ky, j * stride + kx);
              }
            }
          }
        }
      }
    }
  }
  return reshaped(std::move(out), drop_leading(out.shape(), in_rank));
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                         std::int64_t stride) {
  const std::size_t in_rank = x.shape().size();
  const auto s4 = lift4(x.shape(), "transposed_conv2d");
  if (weight.rank() != 4) throw ShapeError("transposed_conv2d: weight must be Cin x Cout x kh x kw");
  const std::int64_t n_n = s4[0], c_in = s4[1], h = s4[2], w = s4[3];
  const std::int64_t c_out = weight.extent(1), kh = weight.extent(2), kw = weight.extent(3);
  if (weight.extent(0) != c_in) {
    throw ShapeError("transposed_conv2d: weight expects " + std::to_string(weight.extent(0)) +
                     " input channels, got " + std::to_string(c_in));
  }
  if (bias.rank() != 1 || bias.extent(0) != c_out) {
    throw ShapeError("transposed_conv2d: bias length must equal Cout");
  }
  if (stride < 1) throw ShapeError("transposed_conv2d: stride must be >= 1");
  const std::int64_t oh = stride * (h - 1) + kh;
  const std::int64_t ow = stride * (w - 1) + kw;

  Tensor x4 = reshaped(x, s4);
  Tensor out({n_n, c_out, oh, ow});
  for (std::int64_t n = 0; n < n_n; ++n)
    for (std::int64_t co = 0; co < c_out; ++co)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) out.at(n, co, i, j) = bias[co];

  for (std::int64_t n = 0; n < n_n; ++n) {
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t i = 0; i < h; ++i) {
          for (std::int64_t j = 0; j < w; ++j) {
            const double xv = x4.at(n, ci, i, j);
            if (xv == 0.0) continue;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                out.at(n, co, i * stride + ky, j * stride + kx) += xv * weight.at(ci, co, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return reshaped(std::move(out), drop_leading(out.shape(), in_rank));
}

Tensor nn_interp(const Tensor& x, std::int64_t r) {
  if (r < 1) throw ShapeError("nn_interp: scale must be >= 1");
  const std::size_t in_rank = x.shape().size();
  const auto s4 = lift4(x.shape(), "nn_interp");
  const std::int64_t n_n = s4[0], c_n = s4[1], h = s4[2], w = s4[3];
  Tensor x4 = reshaped(x, s4);
  Tensor out({n_n, c_n, h * r, w * r});
  for (std::int64_t n = 0; n < n_n; ++n)
    for (std::int64_t c = 0; c < c_n; ++c)
      for (std::int64_t i = 0; i < h * r; ++i)
        for (std::int64_t j = 0; j < w * r; ++j) out.at(n, c, i, j) = x4.at(n, c, i / r, j / r);
  return reshaped(std::move(out), drop_leading(out.shape(), in_rank));
}

Tensor pixel_shuffle(const Tensor& x, std::int64_t r) {
  if (r < 1) throw ShapeError("pixel_shuffle: scale must be >= 1");
  const std::size_t in_rank = x.shape().size();
  const auto s4 = lift4(x.shape(), "pixel_shuffle");
  const std::int64_t n_n = s4[0], c4 = s4[1], h = s4[2], w = s4[3];
  if (c4 % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channel count " + std::to_string(c4) + " not divisible by r^2");
  }
  const std::int64_t c_n = c4 / (r * r);
  Tensor x4 = reshaped(x, s4);
  Tensor out({n_n, c_n, h * r, w * r});
  for (std::int64_t n = 0; n < n_n; ++n)
    for (std::int64_t c = 0; c < c_n; ++c)
      for (std::int64_t a = 0; a < r; ++a)
        for (std::int64_t b = 0; b < r; ++b)
          for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j)
              out.at(n, c, r * i + a, r * j + b) = x4.at(n, c * r * r + a * r + b, i, j);
  return reshaped(std::move(out), drop_leading(out.shape(), in_rank));
}

Tensor pixel_unshuffle(const Tensor& x, std::int64_t r) {
  if (r < 1) throw ShapeError("pixel_unshuffle: scale must be >= 1");
  const std::size_t in_rank = x.shape().size();
  const auto s4 = lift4(x.shape(), "pixel_unshuffle");
  const std::int64_t n_n = s4[0], c_n = s4[1], rh = s4[2], rw = s4[3];
  if (rh % r != 0 || rw % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial extents not divisible by r");
  }
  const std::int64_t h = rh / r, w = rw / r;
  Tensor x4 = reshaped(x, s4);
  Tensor out({n_n, c_n * r * r, h, w});
  for (std::int64_t n = 0; n < n_n; ++n)
    for (std::int64_t c = 0; c < c_n; ++c)
      for (std::int64_t a = 0; a < r; ++a)
        for (std::int64_t b = 0; b < r; ++b)
          for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j)
              out.at(n, c * r * r + a * r + b, i, j) = x4.at(n, c, r * i + a, r * j + b);
  return reshaped(std::move(out), drop_leading(out.shape(), in_rank));
}

Tensor coordinate_grid(std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("coordinate_grid: extents must be >= 1");
  Tensor out({2, height, width});
  for (std::int64_t i = 0; i < height; ++i) {
    const double y = (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(height) - 1.0;
    for (std::int64_t j = 0; j < width; ++j) {
      const double x = (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(width) - 1.0;
      out.at(0, i, j) = y;
      out.at(1, i, j) = x;
    }
  }
  return out;
}

Tensor reflection_pad2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                        std::int64_t right) {
  if (x.rank() < 2) throw ShapeError("reflection_pad2d: need at least 2 dims");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("reflection_pad2d: negative pad");
  const std::int64_t h = x.extent(x.rank() - 2);
  const std::int64_t w = x.extent(x.rank() - 1);
  if (std::max(top, bottom) >= h || std::max(left, right) >= w) {
    throw ShapeError("reflection_pad2d: pad must be smaller than the extent");
  }
  std::vector<std::int64_t> oshape = x.shape();
  oshape[oshape.size() - 2] = h + top + bottom;
  oshape[oshape.size() - 1] = w + left + right;
  const std::int64_t planes = x.numel() / (h * w);
  Tensor out(oshape);
  const std::int64_t oh = h + top + bottom, ow = w + left + right;
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::int64_t i = 0; i < oh; ++i) {
      const std::int64_t si = reflect_index(i - top, h);
      for (std::int64_t j = 0; j < ow; ++j) {
        const std::int64_t sj = reflect_index(j - left, w);
        dst[i * ow + j] = src[si * w + sj];
      }
    }
  }
  return out;
}

Tensor crop2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
              std::int64_t right) {
  if (x.rank() < 2) throw ShapeError("crop2d: need at least 2 dims");
  const std::int64_t h = x.extent(x.rank() - 2);
  const std::int64_t w = x.extent(x.rank() - 1);
  if (top < 0 || bottom < 0 || left < 0 || right < 0 || top + bottom >= h || left + right >= w) {
    throw ShapeError("crop2d: crop exceeds extents");
  }
  std::vector<std::int64_t> oshape = x.shape();
  const std::int64_t oh = h - top - bottom, ow = w - left - right;
  oshape[oshape.size() - 2] = oh;
  oshape[oshape.size() - 1] = ow;
  const std::int64_t planes = x.numel() / (h * w);
  Tensor out(oshape);
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) dst[i * ow + j] = src[(i + top) * w + (j + left)];
  }
  return out;
}

Tensor block_mean_downsample(const Tensor& x, std::int64_t r) {
  if (r < 1) throw ShapeError("block_mean_downsample: scale must be >= 1");
  if (x.rank() < 2) throw ShapeError("block_mean_downsample: need at least 2 dims");
  const std::int64_t h = x.extent(x.rank() - 2);
  const std::int64_t w = x.extent(x.rank() - 1);
  if (h % r != 0 || w % r != 0) throw ShapeError("block_mean_downsample: extents not divisible by r");
  std::vector<std::int64_t> oshape = x.shape();
  oshape[oshape.size() - 2] = h / r;
  oshape[oshape.size() - 1] = w / r;
  const std::int64_t planes = x.numel() / (h * w);
  Tensor out(oshape);
  const double inv = 1.0 / static_cast<double>(r * r);
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * (h / r) * (w / r);
    for (std::int64_t i = 0; i < h / r; ++i) {
      for (std::int64_t j = 0; j < w / r; ++j) {
        double s = 0.0;
        for (std::int64_t a = 0; a < r; ++a)
          for (std::int64_t b = 0; b < r; ++b) s += src[(i * r + a) * w + (j * r + b)];
        dst[i * (w / r) + j] = s * inv;
      }
    }
  }
  return out;
}

}  // namespace fga

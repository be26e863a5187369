#pragma once

#include "fga/tensor.hpp"

namespace fga {

/// Standard cross-correlation with zero padding. x is N x Cin x H x W,
/// weight Cout x Cin x k x k, bias length Cout. Output extent must come out
/// integral: (H + 2*padding - k) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride,
              std::int64_t padding);

/// Scatter (gradient-of-conv) transposed convolution, no implicit padding.
/// x is N x Cin x h x w, weight Cin x Cout x k x k, bias length Cout.
/// Output extent is stride*(h-1) + k. With weight laid out this way the op is
/// the exact input-gradient of conv2d(stride, padding=0) for the same bytes.
Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                         std::int64_t stride);

/// Nearest-neighbour upsampling: each pixel replicated r x r.
Tensor nn_interp(const Tensor& x, std::int64_t r);

/// N x (r^2 C) x h x w  ->  N x C x rh x rw with
/// out(n, c, r*i+a, r*j+b) == in(n, c*r^2 + a*r + b, i, j).
Tensor pixel_shuffle(const Tensor& x, std::int64_t r);

/// Exact inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& x, std::int64_t r);

/// Pixel-center normalized coordinates, 2 x H x W. Channel 0 is
/// y = (2i+1)/H - 1, channel 1 is x = (2j+1)/W - 1; values lie in (-1, 1).
Tensor coordinate_grid(std::int64_t height, std::int64_t width);

/// Reflection padding (edge not repeated) of the two trailing spatial dims.
/// Requires each pad to be smaller than the corresponding extent.
Tensor reflection_pad2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                        std::int64_t right);

/// Crop of the two trailing spatial dims.
Tensor crop2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left,
              std::int64_t right);

/// r x r block mean over the spatial dims; extents must divide by r.
Tensor block_mean_downsample(const Tensor& x, std::int64_t r);

}  // namespace fga

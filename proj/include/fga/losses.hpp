#pragma once

#include "fga/tensor.hpp"

namespace fga {

/// Scalar loss plus (optionally) its gradient with respect to the first
/// argument, shaped like that argument.
struct LossValue {
  double value = 0.0;
  Tensor gradient;
  bool has_gradient = false;
};

/// Mean absolute difference over all elements. Gradient uses the
/// sign(0) = 0 subgradient.
LossValue l1_pixel(const Tensor& pred, const Tensor& target, bool with_gradient = false);

/// Frequency-domain L1: per channel take the unnormalized 2-D DFT of pred
/// and target, sum |Re diff| + |Im diff| over the non-redundant half
/// spectrum u in [0, floor(U/2)], v in [0, V-1], and multiply by 2/(U*V*C).
/// The factor 2 compensates for Hermitian symmetry; the self-conjugate rows
/// u = 0 and u = U/2 are thereby double-weighted relative to an exact
/// Hermitian-pair accounting — the formula is implemented verbatim, not
/// "corrected". Inputs are C x U x V (rank 2 means C = 1; a leading extent
/// of 1 on rank 4 is accepted).
LossValue l1_freq(const Tensor& pred, const Tensor& target, bool with_gradient = false);

}  // namespace fga

#pragma once

#include <string>

#include "fga/tensor.hpp"

namespace fga {

/// Quantization of the (centered) frequency plane into N near-equal-count
/// rings. ring_of is indexed by raw DFT coordinates u*V + v; counts sum to
/// U*V. Rings can be empty when tie groups swallow their targets.
struct RingIndexMap {
  std::int64_t height = 0;  // U
  std::int64_t width = 0;   // V
  std::int64_t n_rings = 0;
  std::vector<std::int32_t> ring_of;
  std::vector<std::int64_t> counts;
};

/// Per-ring correlation curve plus its high-frequency average.
struct FrcCurve {
  std::vector<double> values;
  std::int64_t n_rings = 0;
  std::int64_t i_hf = 0;  // first ring of the top quartile, ceil(0.75 N)
  double auc = 0.0;       // mean of values[i_hf..N-1]
};

/// First ring index of the high-frequency quartile: ceil(0.75 * n_rings).
std::int64_t hf_start(std::int64_t n_rings);

/// Build the ring quantization: bins sorted by (normalized centered radius,
/// row, col) are split into N contiguous groups of near-equal size; a group
/// of bins with identical radius never straddles a boundary (the whole tie
/// group stays in the earlier ring). Radius uses per-axis normalized
/// frequency hypot(su/U, sv/V), su/sv signed centered. Requires U*V >= N.
RingIndexMap ring_index_map(std::int64_t u, std::int64_t v, std::int64_t n = 64);

/// Normalized ring correlation of two equal-sized planes: per ring,
/// Re(sum F1 conj(F2)) / sqrt(sum|F1|^2 * sum|F2|^2); rings where either
/// energy is below 1e-20 yield 0.
FrcCurve frc(const Tensor& a, const Tensor& b, const RingIndexMap& rings);

/// Mean of the top-quartile rings (i_hf = ceil(0.75 N) onward).
double frc_auc(const FrcCurve& curve);

/// 10 log10(peak^2 / MSE); +infinity when the inputs are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Mean local structural similarity over sliding 8x8 uniform windows,
/// constants k1 = 0.01, k2 = 0.03, dynamic range 1. Population moments.
double ssim(const Tensor& a, const Tensor& b);

/// Zero every spectrum bin outside the top-quartile rings, inverse
/// transform, return the pixelwise magnitude.
Tensor hf_band_map(const Tensor& img, const RingIndexMap& rings);

/// Channel-mean log(1+|S|) with DC centered, min-max normalized to [0, 1]
/// (a flat map collapses to zeros). Input C x H x W or H x W.
Tensor spectrum_dump(const Tensor& x);

/// Project per-pixel channel vectors onto the top-k eigenvectors of the
/// channel covariance; each component min-max normalized, zero-variance
/// components filled with 0.5. Optionally reports all C eigenvalues in
/// descending order.
Tensor pca_project(const Tensor& x, std::int64_t k = 3,
                   std::vector<double>* eigenvalues_out = nullptr);

/// Output formats used by the CLI (CSV: header `ring,frc`, then one row per
/// ring, then a `# frc_auc=...` comment line).
std::string frc_curve_csv(const FrcCurve& curve);
std::string frc_curve_json(const FrcCurve& curve);

}  // namespace fga

#pragma once

#include <complex>
#include <vector>

#include "fga/tensor.hpp"

namespace fga {

/// Complex 2-D frequency plane of one channel. Row-major, U rows by V
/// columns. dc_at_origin distinguishes the raw transform (bin (0,0) is the
/// DC term) from a center-shifted display copy.
struct Spectrum {
  std::int64_t height = 0;  // U
  std::int64_t width = 0;   // V
  std::vector<std::complex<double>> bins;
  bool dc_at_origin = true;

  std::complex<double>& at(std::int64_t u, std::int64_t v) {
    return bins[static_cast<std::size_t>(u * width + v)];
  }
  const std::complex<double>& at(std::int64_t u, std::int64_t v) const {
    return bins[static_cast<std::size_t>(u * width + v)];
  }
  std::int64_t numel() const { return height * width; }
};

/// In-place 1-D transform of arbitrary length. Radix-2 for powers of two,
/// Bluestein otherwise. Unnormalized in both directions; callers apply 1/n.
void fft_1d(std::vector<std::complex<double>>& a, bool inverse);

/// Unnormalized forward DFT of a 2-D plane: S(u,v) = sum_x f(x) e^{-2*pi*i*...}.
/// S(0,0) equals the sum of all input samples.
Spectrum fft2d(const Tensor& plane);

/// Real part of the inverse transform with 1/(UV) normalization. Requires
/// dc_at_origin. The imaginary residue of a Hermitian input stays below 1e-9.
Tensor inverse_fft2d(const Spectrum& spec);

/// Full complex inverse with 1/(UV) normalization (for band maps, whose
/// masked spectra need the complex result).
std::vector<std::complex<double>> inverse_fft2d_complex(const Spectrum& spec);

/// Center the DC bin: out(i,j) = in((i + U/2) mod U, (j + V/2) mod V) inverse;
/// i.e. DC moves to (floor(U/2), floor(V/2)).
Spectrum fftshift(const Spectrum& spec);

}  // namespace fga

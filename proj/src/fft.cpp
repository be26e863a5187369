#include "fga/fft.hpp"

#include <cmath>

namespace fga {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, n a power of two.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Bluestein's chirp-z transform for arbitrary n via a power-of-two
// convolution. Exact DFT semantics, unnormalized.
void fft_bluestein(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;

  // chirp[k] = exp(+/- i * pi * k^2 / n); k^2 taken mod 2n to bound the angle.
  std::vector<std::complex<double>> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k2 = (k * k) % (2 * n);
    const double ang = (inverse ? 1.0 : -1.0) * M_PI * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = std::complex<double>(std::cos(ang), std::sin(ang));
  }

  std::vector<std::complex<double>> fa(m, {0.0, 0.0});
  std::vector<std::complex<double>> fb(m, {0.0, 0.0});
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) {
    fb[k] = std::conj(chirp[k]);
    fb[m - k] = fb[k];
  }

  fft_pow2(fa, false);
  fft_pow2(fb, false);
  for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
  fft_pow2(fa, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * chirp[k];
}

}  // namespace

void fft_1d(std::vector<std::complex<double>>& a, bool inverse) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size())) {
    fft_pow2(a, inverse);
  } else {
    fft_bluestein(a, inverse);
  }
}

namespace {

// Transform rows then columns of a U x V complex grid, in place.
void fft2d_grid(std::vector<std::complex<double>>& g, std::int64_t u_n, std::int64_t v_n, bool inverse) {
  std::vector<std::complex<double>> line;
  line.resize(static_cast<std::size_t>(v_n));
  for (std::int64_t u = 0; u < u_n; ++u) {
    for (std::int64_t v = 0; v < v_n; ++v) line[static_cast<std::size_t>(v)] = g[static_cast<std::size_t>(u * v_n + v)];
    fft_1d(line, inverse);
    for (std::int64_t v = 0; v < v_n; ++v) g[static_cast<std::size_t>(u * v_n + v)] = line[static_cast<std::size_t>(v)];
  }
  line.resize(static_cast<std::size_t>(u_n));
  for (std::int64_t v = 0; v < v_n; ++v) {
    for (std::int64_t u = 0; u < u_n; ++u) line[static_cast<std::size_t>(u)] = g[static_cast<std::size_t>(u * v_n + v)];
    fft_1d(line, inverse);
    for (std::int64_t u = 0; u < u_n; ++u) g[static_cast<std::size_t>(u * v_n + v)] = line[static_cast<std::size_t>(u)];
  }
}

}  // namespace

Spectrum fft2d(const Tensor& plane) {
  if (plane.rank() != 2) {
    throw ShapeError("fft2d: expected a 2-D plane, got " + plane.shape_str());
  }
  Spectrum s;
  s.height = plane.extent(0);
  s.width = plane.extent(1);
  s.dc_at_origin = true;
  s.bins.resize(static_cast<std::size_t>(s.numel()));
  for (std::int64_t i = 0; i < s.numel(); ++i) s.bins[static_cast<std::size_t>(i)] = {plane[i], 0.0};
  fft2d_grid(s.bins, s.height, s.width, false);
  return s;
}

std::vector<std::complex<double>> inverse_fft2d_complex(const Spectrum& spec) {
  if (!spec.dc_at_origin) {
    throw ShapeError("inverse_fft2d: spectrum must have DC at the origin");
  }
  std::vector<std::complex<double>> g = spec.bins;
  fft2d_grid(g, spec.height, spec.width, true);
  const double norm = 1.0 / static_cast<double>(spec.numel());
  for (auto& z : g) z *= norm;
  return g;
}

Tensor inverse_fft2d(const Spectrum& spec) {
  const auto g = inverse_fft2d_complex(spec);
  Tensor out({spec.height, spec.width});
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = g[static_cast<std::size_t>(i)].real();
  return out;
}

Spectrum fftshift(const Spectrum& spec) {
  Spectrum out = spec;
  out.dc_at_origin = false;
  const std::int64_t hu = spec.height / 2;
  const std::int64_t hv = spec.width / 2;
  for (std::int64_t u = 0; u < spec.height; ++u) {
    for (std::int64_t v = 0; v < spec.width; ++v) {
      out.at((u + hu) % spec.height, (v + hv) % spec.width) = spec.at(u, v);
    }
  }
  return out;
}

}  // namespace fga

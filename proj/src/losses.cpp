#include "fga/losses.hpp"

#include <cmath>

#include "fga/fft.hpp"

namespace fga {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// View pred/target as C x U x V; rank 2 is a single channel and a leading
// batch extent of 1 is dropped from rank 4.
std::vector<std::int64_t> as_cuv(const Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() == 2) return {1, s[0], s[1]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
  throw ShapeError(std::string(op) + ": expected C x U x V (or H x W), got " + t.shape_str());
}

}  // namespace

LossValue l1_pixel(const Tensor& pred, const Tensor& target, bool with_gradient) {
  if (!pred.same_shape(target)) {
    throw ShapeError("l1_pixel: shape mismatch " + pred.shape_str() + " vs " + target.shape_str());
  }
  const std::int64_t n = pred.numel();
  LossValue out;
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += std::fabs(pred[i] - target[i]);
  out.value = acc / static_cast<double>(n);
  if (with_gradient) {
    out.gradient = Tensor(pred.shape());
    const double inv = 1.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) out.gradient[i] = sign0(pred[i] - target[i]) * inv;
    out.has_gradient = true;
  }
  return out;
}

LossValue l1_freq(const Tensor& pred, const Tensor& target, bool with_gradient) {
  if (!pred.same_shape(target)) {
    throw ShapeError("l1_freq: shape mismatch " + pred.shape_str() + " vs " + target.shape_str());
  }
  const auto cuv = as_cuv(pred, "l1_freq");
  const std::int64_t c_n = cuv[0], u_n = cuv[1], v_n = cuv[2];
  const std::int64_t plane = u_n * v_n;
  const std::int64_t u_half = u_n / 2;  // inclusive upper row of the half spectrum
  const double norm = 2.0 / static_cast<double>(u_n * v_n * c_n);

  LossValue out;
  if (with_gradient) out.gradient = Tensor(pred.shape());
  double acc = 0.0;
  for (std::int64_t c = 0; c < c_n; ++c) {
    Tensor diff({u_n, v_n});
    for (std::int64_t i = 0; i < plane; ++i) diff[i] = pred[c * plane + i] - target[c * plane + i];
    const Spectrum d = fft2d(diff);
    for (std::int64_t u = 0; u <= u_half; ++u) {
      for (std::int64_t v = 0; v < v_n; ++v) {
        const std::complex<double> z = d.at(u, v);
        acc += std::fabs(z.real()) + std::fabs(z.imag());
      }
    }
    if (with_gradient) {
      // d/dx |Re D| + |Im D| over the half region collapses to the real part
      // of an inverse DFT of the sign spectrum; rows above U/2 stay zero.
      Spectrum signs;
      signs.height = u_n;
      signs.width = v_n;
      signs.bins.assign(static_cast<std::size_t>(plane), {0.0, 0.0});
      for (std::int64_t u = 0; u <= u_half; ++u) {
        for (std::int64_t v = 0; v < v_n; ++v) {
          const std::complex<double> z = d.at(u, v);
          signs.at(u, v) = {sign0(z.real()), sign0(z.imag())};
        }
      }
      const std::vector<std::complex<double>> g = inverse_fft2d_complex(signs);
      const double gnorm = 2.0 / static_cast<double>(c_n);
      for (std::int64_t i = 0; i < plane; ++i) {
        out.gradient[c * plane + i] = gnorm * g[static_cast<std::size_t>(i)].real();
      }
    }
  }
  out.value = norm * acc;
  out.has_gradient = with_gradient;
  return out;
}

}  // namespace fga

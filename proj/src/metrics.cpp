#include "fga/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "fga/fft.hpp"
#include "json.hpp"

namespace fga {

std::int64_t hf_start(std::int64_t n_rings) {
  // ceil(0.75 N)
  return (3 * n_rings + 3) / 4;
}

namespace {

Tensor as_plane(const Tensor& t, const char* op) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.extent(0) == 1) {
    return Tensor({t.extent(1), t.extent(2)}, std::vector<double>(t.values()));
  }
  throw ShapeError(std::string(op) + ": expected an H x W plane, got " + t.shape_str());
}

}  // namespace

RingIndexMap ring_index_map(std::int64_t u, std::int64_t v, std::int64_t n) {
  if (u < 1 || v < 1 || n < 1) throw ConfigError("ring_index_map: extents and N must be >= 1");
  if (u * v < n) {
    throw ConfigError("ring_index_map: need at least N bins, got " + std::to_string(u * v) +
                      " for N = " + std::to_string(n));
  }
  struct BinEntry {
    double radius;
    std::int64_t row, col;
  };
  std::vector<BinEntry> bins;
  bins.reserve(static_cast<std::size_t>(u * v));
  for (std::int64_t i = 0; i < u; ++i) {
    const std::int64_t si = i <= u / 2 ? i : i - u;
    for (std::int64_t j = 0; j < v; ++j) {
      const std::int64_t sj = j <= v / 2 ? j : j - v;
      const double radius = std::hypot(static_cast<double>(si) / static_cast<double>(u),
                                       static_cast<double>(sj) / static_cast<double>(v));
      bins.push_back({radius, i, j});
    }
  }
  std::sort(bins.begin(), bins.end(), [](const BinEntry& a, const BinEntry& b) {
    if (a.radius != b.radius) return a.radius < b.radius;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });

  RingIndexMap map;
  map.height = u;
  map.width = v;
  map.n_rings = n;
  map.ring_of.assign(static_cast<std::size_t>(u * v), 0);
  map.counts.assign(static_cast<std::size_t>(n), 0);

  // Cumulative targets for near-equal groups: the first UV mod N rings get
  // one extra bin.
  const std::int64_t base = (u * v) / n;
  const std::int64_t extra = (u * v) % n;
  std::vector<std::int64_t> target(static_cast<std::size_t>(n));
  std::int64_t acc = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    acc += base + (k < extra ? 1 : 0);
    target[static_cast<std::size_t>(k)] = acc;
  }

  std::int64_t ring = 0;
  std::int64_t assigned = 0;
  std::size_t i = 0;
  while (i < bins.size()) {
    // Whole tie group (identical radius) goes to the current ring.
    std::size_t j = i;
    while (j < bins.size() && bins[j].radius == bins[i].radius) ++j;
    for (std::size_t k = i; k < j; ++k) {
      map.ring_of[static_cast<std::size_t>(bins[k].row * v + bins[k].col)] =
          static_cast<std::int32_t>(ring);
    }
    map.counts[static_cast<std::size_t>(ring)] += static_cast<std::int64_t>(j - i);
    assigned += static_cast<std::int64_t>(j - i);
    while (ring < n - 1 && assigned >= target[static_cast<std::size_t>(ring)]) ++ring;
    i = j;
  }
  return map;
}

FrcCurve frc(const Tensor& a, const Tensor& b, const RingIndexMap& rings) {
  const Tensor pa = as_plane(a, "frc");
  const Tensor pb = as_plane(b, "frc");
  if (!pa.same_shape(pb)) {
    throw ShapeError("frc: shape mismatch " + pa.shape_str() + " vs " + pb.shape_str());
  }
  if (pa.extent(0) != rings.height || pa.extent(1) != rings.width) {
    throw ShapeError("frc: ring map is " + std::to_string(rings.height) + "x" +
                     std::to_string(rings.width) + ", images are " + pa.shape_str());
  }
  const Spectrum sa = fft2d(pa);
  const Spectrum sb = fft2d(pb);
  const std::int64_t n = rings.n_rings;
  std::vector<double> num(static_cast<std::size_t>(n), 0.0);
  std::vector<double> e1(static_cast<std::size_t>(n), 0.0);
  std::vector<double> e2(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < sa.numel(); ++i) {
    const std::size_t q = static_cast<std::size_t>(rings.ring_of[static_cast<std::size_t>(i)]);
    const std::complex<double> f1 = sa.bins[static_cast<std::size_t>(i)];
    const std::complex<double> f2 = sb.bins[static_cast<std::size_t>(i)];
    num[q] += (f1 * std::conj(f2)).real();
    e1[q] += std::norm(f1);
    e2[q] += std::norm(f2);
  }
  FrcCurve curve;
  curve.n_rings = n;
  curve.i_hf = hf_start(n);
  curve.values.resize(static_cast<std::size_t>(n));
  for (std::int64_t q = 0; q < n; ++q) {
    const std::size_t qq = static_cast<std::size_t>(q);
    curve.values[qq] =
        (e1[qq] < 1e-20 || e2[qq] < 1e-20) ? 0.0 : num[qq] / std::sqrt(e1[qq] * e2[qq]);
  }
  curve.auc = frc_auc(curve);
  return curve;
}

double frc_auc(const FrcCurve& curve) {
  const std::int64_t n = curve.n_rings;
  if (n < 1 || curve.values.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("frc_auc: malformed curve");
  }
  const std::int64_t i0 = hf_start(n);
  if (i0 >= n) return 0.0;
  double s = 0.0;
  for (std::int64_t i = i0; i < n; ++i) s += curve.values[static_cast<std::size_t>(i)];
  return s / static_cast<double>(n - i0);
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (!a.same_shape(b)) {
    throw ShapeError("psnr: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b) {
  const Tensor pa = as_plane(a, "ssim");
  const Tensor pb = as_plane(b, "ssim");
  if (!pa.same_shape(pb)) {
    throw ShapeError("ssim: shape mismatch " + pa.shape_str() + " vs " + pb.shape_str());
  }
  const std::int64_t h = pa.extent(0), w = pa.extent(1);
  const std::int64_t win = std::min<std::int64_t>(8, std::min(h, w));
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const double inv_n = 1.0 / static_cast<double>(win * win);
  double total = 0.0;
  std::int64_t windows = 0;
  for (std::int64_t i = 0; i + win <= h; ++i) {
    for (std::int64_t j = 0; j + win <= w; ++j) {
      double mx = 0.0, my = 0.0;
      for (std::int64_t y = 0; y < win; ++y)
        for (std::int64_t x = 0; x < win; ++x) {
          mx += pa.at(i + y, j + x);
          my += pb.at(i + y, j + x);
        }
      mx *= inv_n;
      my *= inv_n;
      double vx = 0.0, vy = 0.0, cov = 0.0;
      for (std::int64_t y = 0; y < win; ++y)
        for (std::int64_t x = 0; x < win; ++x) {
          const double dx = pa.at(i + y, j + x) - mx;
          const double dy = pb.at(i + y, j + x) - my;
          vx += dx * dx;
          vy += dy * dy;
          cov += dx * dy;
        }
      vx *= inv_n;
      vy *= inv_n;
      cov *= inv_n;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  if (windows == 0) throw ShapeError("ssim: image smaller than one window");
  return total / static_cast<double>(windows);
}

Tensor hf_band_map(const Tensor& img, const RingIndexMap& rings) {
  const Tensor plane = as_plane(img, "hf_band_map");
  if (plane.extent(0) != rings.height || plane.extent(1) != rings.width) {
    throw ShapeError("hf_band_map: ring map does not match image " + plane.shape_str());
  }
  Spectrum s = fft2d(plane);
  const std::int64_t i0 = hf_start(rings.n_rings);
  for (std::int64_t i = 0; i < s.numel(); ++i) {
    if (rings.ring_of[static_cast<std::size_t>(i)] < i0) s.bins[static_cast<std::size_t>(i)] = 0.0;
  }
  const std::vector<std::complex<double>> z = inverse_fft2d_complex(s);
  Tensor out({plane.extent(0), plane.extent(1)});
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(z[static_cast<std::size_t>(i)]);
  return out;
}

Tensor spectrum_dump(const Tensor& x) {
  Tensor src = x;
  if (src.rank() == 2) src = Tensor({1, src.extent(0), src.extent(1)}, std::vector<double>(src.values()));
  if (src.rank() != 3) throw ShapeError("spectrum_dump: expected C x H x W, got " + x.shape_str());
  const std::int64_t c = src.extent(0), h = src.extent(1), w = src.extent(2);
  Tensor acc({h, w});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    Tensor plane({h, w});
    for (std::int64_t i = 0; i < h * w; ++i) plane[i] = src[ch * h * w + i];
    const Spectrum s = fftshift(fft2d(plane));
    for (std::int64_t i = 0; i < h * w; ++i) {
      acc[i] += std::log1p(std::abs(s.bins[static_cast<std::size_t>(i)]));
    }
  }
  for (std::int64_t i = 0; i < h * w; ++i) acc[i] /= static_cast<double>(c);
  double lo = acc[0], hi = acc[0];
  for (std::int64_t i = 1; i < h * w; ++i) {
    lo = std::min(lo, acc[i]);
    hi = std::max(hi, acc[i]);
  }
  if (hi > lo) {
    for (std::int64_t i = 0; i < h * w; ++i) acc[i] = (acc[i] - lo) / (hi - lo);
  } else {
    for (std::int64_t i = 0; i < h * w; ++i) acc[i] = 0.0;
  }
  return acc;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix held row-major in
// `a` (n x n). Eigenvectors end up as columns of `vecs`.
void jacobi_eigen(std::vector<double>& a, std::vector<double>& vecs, std::int64_t n) {
  vecs.assign(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) vecs[static_cast<std::size_t>(i * n + i)] = 1.0;
  auto idx = [n](std::int64_t r, std::int64_t c) { return static_cast<std::size_t>(r * n + c); };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::int64_t p = 0; p < n; ++p)
      for (std::int64_t q = p + 1; q < n; ++q) off += a[idx(p, q)] * a[idx(p, q)];
    if (off < 1e-24) break;
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        const double apq = a[idx(p, q)];
        if (std::fabs(apq) < 1e-300) continue;
        const double app = a[idx(p, p)], aqq = a[idx(q, q)];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::int64_t k = 0; k < n; ++k) {
          const double akp = a[idx(k, p)], akq = a[idx(k, q)];
          a[idx(k, p)] = c * akp - s * akq;
          a[idx(k, q)] = s * akp + c * akq;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double apk = a[idx(p, k)], aqk = a[idx(q, k)];
          a[idx(p, k)] = c * apk - s * aqk;
          a[idx(q, k)] = s * apk + c * aqk;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double vkp = vecs[idx(k, p)], vkq = vecs[idx(k, q)];
          vecs[idx(k, p)] = c * vkp - s * vkq;
          vecs[idx(k, q)] = s * vkp + c * vkq;
        }
      }
    }
  }
}

}  // namespace

Tensor pca_project(const Tensor& x, std::int64_t k, std::vector<double>* eigenvalues_out) {
  if (x.rank() != 3) throw ShapeError("pca_project: expected C x H x W, got " + x.shape_str());
  const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (k < 1 || k > c) throw ConfigError("pca_project: need 1 <= k <= C");
  const std::int64_t pix = h * w;
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t i = 0; i < pix; ++i) mean[static_cast<std::size_t>(ch)] += x[ch * pix + i];
    mean[static_cast<std::size_t>(ch)] /= static_cast<double>(pix);
  }
  std::vector<double> cov(static_cast<std::size_t>(c * c), 0.0);
  for (std::int64_t i = 0; i < pix; ++i) {
    for (std::int64_t p = 0; p < c; ++p) {
      const double dp = x[p * pix + i] - mean[static_cast<std::size_t>(p)];
      for (std::int64_t q = p; q < c; ++q) {
        const double dq = x[q * pix + i] - mean[static_cast<std::size_t>(q)];
        cov[static_cast<std::size_t>(p * c + q)] += dp * dq;
      }
    }
  }
  for (std::int64_t p = 0; p < c; ++p)
    for (std::int64_t q = p; q < c; ++q) {
      const double v = cov[static_cast<std::size_t>(p * c + q)] / static_cast<double>(pix);
      cov[static_cast<std::size_t>(p * c + q)] = v;
      cov[static_cast<std::size_t>(q * c + p)] = v;
    }

  std::vector<double> vecs;
  jacobi_eigen(cov, vecs, c);
  std::vector<std::int64_t> order(static_cast<std::size_t>(c));
  for (std::int64_t i = 0; i < c; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return cov[static_cast<std::size_t>(a * c + a)] > cov[static_cast<std::size_t>(b * c + b)];
  });
  if (eigenvalues_out) {
    eigenvalues_out->clear();
    for (std::int64_t i = 0; i < c; ++i) {
      eigenvalues_out->push_back(cov[static_cast<std::size_t>(order[static_cast<std::size_t>(i)] * c +
                                                              order[static_cast<std::size_t>(i)])]);
    }
  }

  Tensor out({k, h, w});
  for (std::int64_t comp = 0; comp < k; ++comp) {
    const std::int64_t col = order[static_cast<std::size_t>(comp)];
    // Deterministic sign: the largest-magnitude entry of the eigenvector is
    // made positive.
    double best = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double v = vecs[static_cast<std::size_t>(ch * c + col)];
      if (std::fabs(v) > std::fabs(best)) best = v;
    }
    const double flip = best < 0.0 ? -1.0 : 1.0;
    double lo = 0.0, hi = 0.0;
    for (std::int64_t i = 0; i < pix; ++i) {
      double proj = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        proj += flip * vecs[static_cast<std::size_t>(ch * c + col)] *
                (x[ch * pix + i] - mean[static_cast<std::size_t>(ch)]);
      }
      out[comp * pix + i] = proj;
      if (i == 0) {
        lo = hi = proj;
      } else {
        lo = std::min(lo, proj);
        hi = std::max(hi, proj);
      }
    }
    if (hi - lo > 1e-12) {
      for (std::int64_t i = 0; i < pix; ++i) out[comp * pix + i] = (out[comp * pix + i] - lo) / (hi - lo);
    } else {
      for (std::int64_t i = 0; i < pix; ++i) out[comp * pix + i] = 0.5;
    }
  }
  return out;
}

std::string frc_curve_csv(const FrcCurve& curve) {
  std::string out = "ring,frc\n";
  char line[64];
  for (std::int64_t i = 0; i < curve.n_rings; ++i) {
    std::snprintf(line, sizeof(line), "%lld,%.17g\n", static_cast<long long>(i),
                  curve.values[static_cast<std::size_t>(i)]);
    out += line;
  }
  std::snprintf(line, sizeof(line), "# frc_auc=%.17g\n", curve.auc);
  out += line;
  return out;
}

std::string frc_curve_json(const FrcCurve& curve) {
  nlohmann::json j{{"n_rings", curve.n_rings},
                   {"values", curve.values},
                   {"frc_auc", curve.auc},
                   {"i_hf", curve.i_hf}};
  return j.dump(2) + "\n";
}

}  // namespace fga

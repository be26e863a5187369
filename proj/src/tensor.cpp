#include "fga/tensor.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace fga {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) n *= e;
  return n;
}

static void check_shape(const std::vector<std::int64_t>& shape) {
  for (std::int64_t e : shape) {
    if (e < 1) throw ShapeError("tensor extents must be >= 1");
  }
}

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("tensor value count does not match extents");
  }
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = value;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ", ";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= factor;
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i];
  return s;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

double mean(const Tensor& a) { return sum(a) / static_cast<double>(a.numel()); }

double variance(const Tensor& a) {
  const double mu = mean(a);
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - mu;
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

struct Rng::Impl {
  std::mt19937_64 engine;
  bool have_spare = false;
  double spare = 0.0;
};

Rng::Rng(std::uint64_t seed) : impl_(new Impl) { impl_->engine.seed(seed); }
Rng::~Rng() { delete impl_; }
Rng::Rng(Rng&& other) noexcept : impl_(other.impl_) { other.impl_ = nullptr; }
Rng& Rng::operator=(Rng&& other) noexcept {
  if (this != &other) {
    delete impl_;
    impl_ = other.impl_;
    other.impl_ = nullptr;
  }
  return *this;
}

double Rng::uniform() {
  // 53-bit mantissa draw, value in [0, 1).
  return static_cast<double>(impl_->engine() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (impl_->have_spare) {
    impl_->have_spare = false;
    return impl_->spare;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  impl_->spare = r * std::sin(theta);
  impl_->have_spare = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = impl_->engine();
  } while (x >= limit);
  return x % n;
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
}

void Rng::fill_normal(Tensor& t, double m, double stddev) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = m + stddev * normal();
}

}  // namespace fga

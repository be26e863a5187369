#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fga {

/// Thrown when tensor extents do not satisfy an operation's contract.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown for invalid configuration values (bad channel counts, scales, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when a computation produces or receives non-finite values.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on file / stream failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense real-valued N-dimensional array, row-major with the last extent
/// fastest. Feature maps use the N x C x H x W interpretation. Values are
/// kept in 64-bit precision internally; file I/O narrows to 32-bit.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t extent(std::int64_t dim) const { return shape_[static_cast<std::size_t>(dim)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 2-D / 3-D / 4-D accessors; the caller is responsible for rank.
  double& at(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double at(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  double& at(std::int64_t c, std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>((c * shape_[1] + i) * shape_[2] + j)];
  }
  double at(std::int64_t c, std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + i) * shape_[2] + j)];
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Shape string like "[1, 3, 8, 8]" for diagnostics.
  std::string shape_str() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

/// Elementwise helpers used across modules. All require equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs(const Tensor& a);
double mean(const Tensor& a);
double variance(const Tensor& a);

/// Deterministic random source. The mt19937_64 sequence is pinned by the
/// standard; the distributions are hand-coded because the standard library
/// ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  ~Rng();
  Rng(const Rng&) = delete;
  Rng& operator=(const Rng&) = delete;
  Rng(Rng&&) noexcept;
  Rng& operator=(Rng&&) noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  void fill_uniform(Tensor& t, double lo, double hi);
  void fill_normal(Tensor& t, double mean, double stddev);

 private:
  struct Impl;
  Impl* impl_;
};

}  // namespace fga

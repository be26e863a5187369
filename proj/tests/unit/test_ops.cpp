#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "fga/ops.hpp"
#include "fga/tensor.hpp"
#include "test_util.hpp"

using fga::Tensor;

namespace {

// Six-loop reference convolution, zero padding, no tricks.
Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
                    std::int64_t padding) {
  const std::int64_t n_n = x.extent(0), c_in = x.extent(1), h = x.extent(2), w_in = x.extent(3);
  const std::int64_t c_out = w.extent(0), k = w.extent(2);
  const std::int64_t oh = (h + 2 * padding - k) / stride + 1;
  const std::int64_t ow = (w_in + 2 * padding - k) / stride + 1;
  Tensor out({n_n, c_out, oh, ow});
  for (std::int64_t n = 0; n < n_n; ++n) {
    for (std::int64_t co = 0; co < c_out; ++co) {
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = b.numel() > 0 ? b.values()[static_cast<std::size_t>(co)] : 0.0;
          for (std::int64_t ci = 0; ci < c_in; ++ci) {
            for (std::int64_t ky = 0; ky < k; ++ky) {
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t yy = i * stride + ky - padding;
                const std::int64_t xx = j * stride + kx - padding;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w_in) continue;
                acc += w.at(co, ci, ky, kx) * x.at(n, ci, yy, xx);
              }
            }
          }
          out.at(n, co, i, j) = acc;
        }
      }
    }
  }
  return out;
}

// Reference transposed convolution via direct output-pixel accumulation.
Tensor naive_transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                               std::int64_t stride) {
  const std::int64_t n_n = x.extent(0), c_in = x.extent(1), h = x.extent(2), w_in = x.extent(3);
  const std::int64_t c_out = w.extent(1), k = w.extent(2);
  const std::int64_t oh = stride * (h - 1) + k;
  const std::int64_t ow = stride * (w_in - 1) + k;
  Tensor out({n_n, c_out, oh, ow});
  for (std::int64_t n = 0; n < n_n; ++n) {
    for (std::int64_t co = 0; co < c_out; ++co) {
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          out.at(n, co, i, j) = b.numel() > 0 ? b.values()[static_cast<std::size_t>(co)] : 0.0;
        }
      }
    }
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w_in; ++j) {
          for (std::int64_t co = 0; co < c_out; ++co) {
            for (std::int64_t ky = 0; ky < k; ++ky) {
              for (std::int64_t kx = 0; kx < k; ++kx) {
                out.at(n, co, i * stride + ky, j * stride + kx) +=
                    x.at(n, ci, i, j) * w.at(ci, co, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("3x3 ones kernel on a 5x5 ones image counts the neighbourhood") {
  const Tensor x = Tensor::full({1, 1, 5, 5}, 1.0);
  const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor b = Tensor::zeros({1});
  const Tensor y = fga::conv2d(x, w, b, 1, 1);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 5, 5});
  CHECK(y.at(0, 0, 2, 2) == 9.0);  // interior
  CHECK(y.at(0, 0, 0, 2) == 6.0);  // edge
  CHECK(y.at(0, 0, 2, 0) == 6.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);  // corner
  CHECK(y.at(0, 0, 4, 4) == 4.0);
}

TEST_CASE("conv2d matches the six-loop reference across strides and paddings") {
  fga::Rng rng(3);
  for (std::int64_t stride : {1, 2}) {
    for (std::int64_t padding : {0, 1, 2}) {
      for (std::int64_t k : {1, 2, 3}) {
        const std::int64_t h = 5, wdt = 6;
        if ((h + 2 * padding - k) % stride != 0 || (wdt + 2 * padding - k) % stride != 0) continue;
        if (h + 2 * padding < k) continue;
        const Tensor x = testutil::random_tensor({2, 3, h, wdt}, rng);
        const Tensor w = testutil::random_tensor({4, 3, k, k}, rng);
        const Tensor b = testutil::random_tensor({4}, rng);
        CAPTURE(stride);
        CAPTURE(padding);
        CAPTURE(k);
        CHECK(testutil::max_abs_diff(fga::conv2d(x, w, b, stride, padding),
                                     naive_conv2d(x, w, b, stride, padding)) < 1e-12);
      }
    }
  }
}

TEST_CASE("transposed_conv2d matches its reference") {
  fga::Rng rng(5);
  for (std::int64_t stride : {1, 2, 3}) {
    for (std::int64_t k : {1, 2, 4}) {
      const Tensor x = testutil::random_tensor({2, 3, 4, 3}, rng);
      const Tensor w = testutil::random_tensor({3, 2, k, k}, rng);
      const Tensor b = testutil::random_tensor({2}, rng);
      CAPTURE(stride);
      CAPTURE(k);
      CHECK(testutil::max_abs_diff(fga::transposed_conv2d(x, w, b, stride),
                                   naive_transposed_conv2d(x, w, b, stride)) < 1e-12);
    }
  }
}

TEST_CASE("transposed convolution of an impulse stamps the kernel periodically") {
  // One input pixel lights exactly one k x k copy of the kernel at (i*s, j*s):
  // the uneven-overlap mechanism behind checkerboard artifacts.
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  x.at(0, 0, 1, 1) = 1.0;
  Tensor w({1, 1, 4, 4});
  for (std::int64_t i = 0; i < 16; ++i) w.values()[static_cast<std::size_t>(i)] = i + 1;
  const Tensor y = fga::transposed_conv2d(x, w, Tensor::zeros({1}), 2);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 6, 6});
  for (std::int64_t i = 0; i < 6; ++i) {
    for (std::int64_t j = 0; j < 6; ++j) {
      const double expect =
          (i >= 2 && j >= 2) ? w.at(0, 0, i - 2, j - 2) : 0.0;
      CHECK(y.at(0, 0, i, j) == expect);
    }
  }
}

TEST_CASE("pixel_shuffle places channel groups at their sub-pixel offsets") {
  Tensor x({1, 4, 1, 1});
  x.values() = {10.0, 11.0, 12.0, 13.0};
  const Tensor y = fga::pixel_shuffle(x, 2);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 2, 2});
  CHECK(y.at(0, 0, 0, 0) == 10.0);
  CHECK(y.at(0, 0, 0, 1) == 11.0);
  CHECK(y.at(0, 0, 1, 0) == 12.0);
  CHECK(y.at(0, 0, 1, 1) == 13.0);
}

TEST_CASE("pixel_unshuffle folds 2x2 blocks back into channels") {
  Tensor x({1, 1, 2, 2});
  x.values() = {1.0, 2.0, 3.0, 4.0};
  const Tensor y = fga::pixel_unshuffle(x, 2);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 4, 1, 1});
  CHECK(y.values() == std::vector<double>{1.0, 2.0, 3.0, 4.0});
}

TEST_CASE("shuffle and unshuffle are bit-exact inverses over 100 random shapes") {
  fga::Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t r = 1 + static_cast<std::int64_t>(rng.uniform(0.0, 3.0));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform(0.0, 2.0));
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform(0.0, 4.0));
    const std::int64_t h = 1 + static_cast<std::int64_t>(rng.uniform(0.0, 5.0));
    const std::int64_t w = 1 + static_cast<std::int64_t>(rng.uniform(0.0, 5.0));
    const Tensor packed = testutil::random_tensor({n, c * r * r, h, w}, rng);
    const Tensor wide = fga::pixel_shuffle(packed, r);
    REQUIRE(wide.shape() == std::vector<std::int64_t>{n, c, h * r, w * r});
    const Tensor back = fga::pixel_unshuffle(wide, r);
    CHECK(back.values() == packed.values());  // bit-exact
    const Tensor wide2 = fga::pixel_shuffle(back, r);
    CHECK(wide2.values() == wide.values());
  }
}

TEST_CASE("nn_interp replicates each pixel into an r x r block") {
  Tensor x({1, 1, 1, 2});
  x.values() = {5.0, -3.0};
  const Tensor y = fga::nn_interp(x, 2);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 2, 4});
  CHECK(y.values() == std::vector<double>{5.0, 5.0, -3.0, -3.0, 5.0, 5.0, -3.0, -3.0});
}

TEST_CASE("coordinate_grid uses pixel centers in (-1, 1)") {
  const Tensor g = fga::coordinate_grid(2, 2);
  REQUIRE(g.shape() == std::vector<std::int64_t>{2, 2, 2});
  CHECK(g.at(0, 0, 0) == doctest::Approx(-0.5));  // y of row 0
  CHECK(g.at(0, 1, 0) == doctest::Approx(0.5));   // y of row 1
  CHECK(g.at(1, 0, 0) == doctest::Approx(-0.5));  // x of col 0
  CHECK(g.at(1, 0, 1) == doctest::Approx(0.5));   // x of col 1

  const Tensor g4 = fga::coordinate_grid(4, 4);
  CHECK(g4.at(0, 0, 0) == doctest::Approx(-0.75));
  CHECK(g4.at(0, 1, 0) == doctest::Approx(-0.25));
  CHECK(g4.at(0, 2, 0) == doctest::Approx(0.25));
  CHECK(g4.at(0, 3, 0) == doctest::Approx(0.75));
}

TEST_CASE("reflection_pad2d mirrors without repeating the edge") {
  Tensor x({1, 1, 1, 4});
  x.values() = {1.0, 2.0, 3.0, 4.0};
  const Tensor y = fga::reflection_pad2d(x, 0, 0, 2, 1);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 1, 7});
  CHECK(y.values() == std::vector<double>{3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0});

  Tensor col({1, 1, 3, 1});
  col.values() = {1.0, 2.0, 3.0};
  const Tensor yc = fga::reflection_pad2d(col, 1, 2, 0, 0);
  CHECK(yc.values() == std::vector<double>{2.0, 1.0, 2.0, 3.0, 2.0, 1.0});
}

TEST_CASE("crop2d inverts padding") {
  fga::Rng rng(17);
  const Tensor x = testutil::random_tensor({2, 2, 4, 5}, rng);
  const Tensor padded = fga::reflection_pad2d(x, 1, 2, 3, 1);
  const Tensor back = fga::crop2d(padded, 1, 2, 3, 1);
  CHECK(back.values() == x.values());
}

TEST_CASE("block_mean_downsample averages r x r blocks") {
  Tensor x({1, 1, 2, 4});
  x.values() = {1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0};
  const Tensor y = fga::block_mean_downsample(x, 2);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 1, 2});
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(2.5));
  CHECK(y.at(0, 0, 0, 1) == doctest::Approx(6.5));
}

TEST_CASE("block_mean_downsample is the left inverse of nn_interp") {
  fga::Rng rng(19);
  const Tensor x = testutil::random_tensor({1, 3, 3, 4}, rng);
  const Tensor back = fga::block_mean_downsample(fga::nn_interp(x, 3), 3);
  CHECK(testutil::max_abs_diff(back, x) < 1e-12);
}

TEST_CASE("shape violations throw ShapeError") {
  const Tensor x = Tensor::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(fga::conv2d(x, Tensor::zeros({2, 2, 3, 3}), Tensor::zeros({2}), 1, 1),
                  fga::ShapeError);  // Cin mismatch
  CHECK_THROWS_AS(fga::conv2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor::zeros({3}), 1, 1),
                  fga::ShapeError);  // bias length
  CHECK_THROWS_AS(fga::conv2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor::zeros({2}), 2, 0),
                  fga::ShapeError);  // non-integral output extent
  CHECK_THROWS_AS(fga::pixel_shuffle(Tensor::zeros({1, 3, 2, 2}), 2), fga::ShapeError);
  CHECK_THROWS_AS(fga::pixel_unshuffle(Tensor::zeros({1, 1, 3, 3}), 2), fga::ShapeError);
  CHECK_THROWS_AS(fga::reflection_pad2d(x, 4, 0, 0, 0), fga::ShapeError);
  CHECK_THROWS_AS(fga::block_mean_downsample(x, 3), fga::ShapeError);
}

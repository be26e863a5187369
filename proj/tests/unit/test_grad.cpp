#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "fga/grad.hpp"
#include "fga/ops.hpp"
#include "test_util.hpp"

using fga::GradTape;
using fga::Tensor;
using fga::Var;
using testutil::gradient_check;
using testutil::project_output;
using testutil::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// Uniform values bounded away from zero, for |.|-style kinks.
Tensor kink_free_tensor(const std::vector<std::int64_t>& shape, fga::Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = sign * rng.uniform(0.2, 1.0);
  }
  return t;
}

}  // namespace

TEST_CASE("elementwise and reduction ops pass the finite-difference check") {
  fga::Rng rng(3);
  const Tensor x0 = random_tensor({2, 3}, rng);
  const Tensor other = random_tensor({2, 3}, rng);
  const Tensor w = random_tensor({2, 3}, rng);

  auto check_unary = [&](const char* name,
                         const std::function<Var(GradTape&, Var)>& op, const Tensor& at) {
    CAPTURE(name);
    CHECK(gradient_check(project_output(op, w), at) < kTol);
  };

  check_unary("scale", [](GradTape& t, Var x) { return t.scale(x, -1.7); }, x0);
  check_unary("gelu", [](GradTape& t, Var x) { return t.gelu(x); }, x0);
  check_unary("cos_pi", [](GradTape& t, Var x) { return t.cos_pi(x); }, x0);
  check_unary("sin_pi", [](GradTape& t, Var x) { return t.sin_pi(x); }, x0);
  check_unary("abs", [](GradTape& t, Var x) { return t.abs(x); }, kink_free_tensor({2, 3}, rng));
  check_unary("add", [&](GradTape& t, Var x) { return t.add(x, t.leaf(other)); }, x0);
  check_unary("sub", [&](GradTape& t, Var x) { return t.sub(t.leaf(other), x); }, x0);
  check_unary("mul", [&](GradTape& t, Var x) { return t.mul(x, t.leaf(other)); }, x0);
  check_unary("mul_self", [](GradTape& t, Var x) { return t.mul(x, x); }, x0);

  CHECK(gradient_check([](GradTape& t, Var x) { return t.sum_all(x); }, x0) < kTol);
  CHECK(gradient_check([](GradTape& t, Var x) { return t.mean_all(x); }, x0) < kTol);
}

TEST_CASE("matrix ops pass the finite-difference check") {
  fga::Rng rng(5);
  const Tensor a0 = random_tensor({3, 4}, rng);
  const Tensor b0 = random_tensor({4, 2}, rng);
  const Tensor pw = random_tensor({3, 2}, rng);

  // d/dA of sum(w . A B)
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) { return t.matmul(x, t.leaf(b0)); }, pw),
                       a0) < kTol);
  // d/dB
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) { return t.matmul(t.leaf(a0), x); }, pw),
                       b0) < kTol);
  CHECK(gradient_check(project_output([](GradTape& t, Var x) { return t.transpose(x); },
                                      random_tensor({4, 3}, rng)),
                       a0) < kTol);
}

TEST_CASE("linear layer gradient matches a hand-derived affine case") {
  // y = x W^T + b with x = [1, 2], W = [[3, 4], [5, 6]], b = [7, 8].
  // loss = sum(y) => dx = column sums of W^T rows = [3+5, 4+6] = [8, 10],
  // dW = [[1, 2], [1, 2]], db = [1, 1].
  Tensor x0({1, 2});
  x0.values() = {1.0, 2.0};
  Tensor w0({2, 2});
  w0.values() = {3.0, 4.0, 5.0, 6.0};
  Tensor b0({2});
  b0.values() = {7.0, 8.0};

  GradTape tape;
  const Var x = tape.leaf(x0);
  const Var w = tape.leaf(w0);
  const Var b = tape.leaf(b0);
  const Var y = tape.linear(x, w, b);
  CHECK(tape.value(y).values() == std::vector<double>{3.0 + 8.0 + 7.0, 5.0 + 12.0 + 8.0});
  tape.backward(tape.sum_all(y));
  CHECK(tape.grad(x).values() == std::vector<double>{8.0, 10.0});
  CHECK(tape.grad(w).values() == std::vector<double>{1.0, 2.0, 1.0, 2.0});
  CHECK(tape.grad(b).values() == std::vector<double>{1.0, 1.0});
}

TEST_CASE("linear, project, softmax and layer norm pass the FD check") {
  fga::Rng rng(7);
  const Tensor x0 = random_tensor({3, 4}, rng);
  const Tensor w0 = random_tensor({5, 4}, rng);
  const Tensor b0 = random_tensor({5}, rng);
  const Tensor pw = random_tensor({3, 5}, rng);
  const Tensor pw_sq = random_tensor({3, 4}, rng);

  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) {
                             return t.linear(x, t.leaf(w0), t.leaf(b0));
                           },
                           pw),
                       x0) < kTol);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) {
                             return t.linear(t.leaf(x0), x, t.leaf(b0));
                           },
                           pw),
                       w0) < kTol);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) {
                             return t.linear(t.leaf(x0), t.leaf(w0), x);
                           },
                           pw),
                       b0) < kTol);
  const Tensor proj_w = random_tensor({4, 4}, rng);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) { return t.project(x, t.leaf(proj_w)); },
                           pw_sq),
                       x0) < kTol);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) { return t.project(t.leaf(x0), x); },
                           pw_sq),
                       proj_w) < kTol);
  CHECK(gradient_check(project_output([](GradTape& t, Var x) { return t.softmax_rows(x); },
                                      pw_sq),
                       x0) < kTol);

  const Tensor gamma = random_tensor({4}, rng, 0.5, 1.5);
  const Tensor beta = random_tensor({4}, rng);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) {
                             return t.layer_norm_rows(x, t.leaf(gamma), t.leaf(beta), 1e-5);
                           },
                           pw_sq),
                       x0) < kTol);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) {
                             return t.layer_norm_rows(t.leaf(x0), x, t.leaf(beta), 1e-5);
                           },
                           pw_sq),
                       gamma) < kTol);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) {
                             return t.layer_norm_rows(t.leaf(x0), t.leaf(gamma), x, 1e-5);
                           },
                           pw_sq),
                       beta) < kTol);
}

TEST_CASE("softmax row gradients sum to zero") {
  fga::Rng rng(11);
  const Tensor x0 = random_tensor({4, 5}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor g = testutil::analytic_gradient(
      project_output([](GradTape& t, Var x) { return t.softmax_rows(x); }, w), x0);
  for (std::int64_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::int64_t j = 0; j < 5; ++j) row += g.at(i, j);
    CHECK(std::abs(row) < 1e-10);
  }
}

TEST_CASE("conv2d gradients for input, weight and bias across strides/paddings") {
  fga::Rng rng(13);
  for (std::int64_t stride : {1, 2}) {
    for (std::int64_t padding : {0, 1}) {
      const std::int64_t h = 5, wdt = 5, k = 3;
      if ((h + 2 * padding - k) % stride != 0) continue;
      const Tensor x0 = random_tensor({1, 2, h, wdt}, rng);
      const Tensor w0 = random_tensor({3, 2, k, k}, rng);
      const Tensor b0 = random_tensor({3}, rng);
      const std::int64_t oh = (h + 2 * padding - k) / stride + 1;
      const Tensor pw = random_tensor({1, 3, oh, oh}, rng);
      CAPTURE(stride);
      CAPTURE(padding);
      CHECK(gradient_check(project_output(
                               [&](GradTape& t, Var x) {
                                 return t.conv2d(x, t.leaf(w0), t.leaf(b0), stride, padding);
                               },
                               pw),
                           x0) < kTol);
      CHECK(gradient_check(project_output(
                               [&](GradTape& t, Var x) {
                                 return t.conv2d(t.leaf(x0), x, t.leaf(b0), stride, padding);
                               },
                               pw),
                           w0) < kTol);
      CHECK(gradient_check(project_output(
                               [&](GradTape& t, Var x) {
                                 return t.conv2d(t.leaf(x0), t.leaf(w0), x, stride, padding);
                               },
                               pw),
                           b0) < kTol);
    }
  }
}

TEST_CASE("transposed_conv2d gradients for input, weight and bias") {
  fga::Rng rng(17);
  for (std::int64_t stride : {1, 2, 3}) {
    const std::int64_t k = 4;
    const Tensor x0 = random_tensor({1, 2, 3, 2}, rng);
    const Tensor w0 = random_tensor({2, 3, k, k}, rng);
    const Tensor b0 = random_tensor({3}, rng);
    const std::int64_t oh = stride * 2 + k, ow = stride * 1 + k;
    const Tensor pw = random_tensor({1, 3, oh, ow}, rng);
    CAPTURE(stride);
    CHECK(gradient_check(project_output(
                             [&](GradTape& t, Var x) {
                               return t.transposed_conv2d(x, t.leaf(w0), t.leaf(b0), stride);
                             },
                             pw),
                         x0) < kTol);
    CHECK(gradient_check(project_output(
                             [&](GradTape& t, Var x) {
                               return t.transposed_conv2d(t.leaf(x0), x, t.leaf(b0), stride);
                             },
                             pw),
                         w0) < kTol);
    CHECK(gradient_check(project_output(
                             [&](GradTape& t, Var x) {
                               return t.transposed_conv2d(t.leaf(x0), t.leaf(w0), x, stride);
                             },
                             pw),
                         b0) < kTol);
  }
}

TEST_CASE("transposed_conv2d is the exact adjoint of conv2d") {
  // <g, conv(x)> = <conv_input_grad(g), x>; with shared weight bytes the
  // input gradient of conv2d(stride, pad 0) must BE transposed_conv2d.
  fga::Rng rng(19);
  const Tensor x0 = random_tensor({1, 2, 6, 6}, rng);
  const Tensor w0 = random_tensor({3, 2, 3, 3}, rng);
  const Tensor zero_b = Tensor::zeros({3});
  for (std::int64_t stride : {1, 3}) {
    const Tensor y = fga::conv2d(x0, w0, zero_b, stride, 0);
    const Tensor g = random_tensor(y.shape(), rng);
    GradTape tape;
    const Var x = tape.leaf(x0);
    const Var conv = tape.conv2d(x, tape.leaf(w0), tape.leaf(zero_b), stride, 0);
    tape.backward(tape.sum_all(tape.mul(conv, tape.leaf(g))));
    const Tensor expect = fga::transposed_conv2d(g, w0, Tensor::zeros({2}), stride);
    CHECK(tape.grad(x).values() == expect.values());  // bit-exact, same code path
  }
}

TEST_CASE("permutation-style ops pass the FD check and exact adjoint checks") {
  fga::Rng rng(23);
  const Tensor packed = random_tensor({1, 8, 2, 3}, rng);
  const Tensor wide = random_tensor({1, 2, 4, 6}, rng);
  CHECK(gradient_check(project_output([](GradTape& t, Var x) { return t.pixel_shuffle(x, 2); },
                                      random_tensor({1, 2, 4, 6}, rng)),
                       packed) < kTol);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) { return t.pixel_unshuffle(x, 2); },
                           random_tensor({1, 8, 2, 3}, rng)),
                       wide) < kTol);

  // Pure permutation: the gradient is exactly the inverse permutation of the
  // upstream weights, bitwise.
  {
    GradTape tape;
    const Var x = tape.leaf(packed);
    const Tensor w = random_tensor({1, 2, 4, 6}, rng);
    tape.backward(tape.sum_all(tape.mul(tape.pixel_shuffle(x, 2), tape.leaf(w))));
    CHECK(tape.grad(x).values() == fga::pixel_unshuffle(w, 2).values());
  }

  CHECK(gradient_check(project_output([](GradTape& t, Var x) { return t.nn_interp(x, 2); },
                                      random_tensor({1, 2, 4, 6}, rng)),
                       random_tensor({1, 2, 2, 3}, rng)) < kTol);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) { return t.reflection_pad2d(x, 1, 2, 2, 1); },
                           random_tensor({1, 2, 7, 9}, rng)),
                       random_tensor({1, 2, 4, 6}, rng)) < kTol);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) { return t.crop2d(x, 1, 0, 2, 1); },
                           random_tensor({1, 2, 3, 3}, rng)),
                       random_tensor({1, 2, 4, 6}, rng)) < kTol);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) { return t.zero_pad2d(x, 1, 2, 0, 3); },
                           random_tensor({1, 2, 7, 9}, rng)),
                       random_tensor({1, 2, 4, 6}, rng)) < kTol);
}

TEST_CASE("reshape, slicing, gather and token ops pass the FD check") {
  fga::Rng rng(29);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) {
                             return t.reshape(x, {3, 8});
                           },
                           random_tensor({3, 8}, rng)),
                       random_tensor({2, 3, 4}, rng)) < kTol);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) { return t.slice_dim0(x, 1, 2); },
                           random_tensor({2, 3}, rng)),
                       random_tensor({5, 3}, rng)) < kTol);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) {
                             return t.gather_channels(x, {3, 0, 3});
                           },
                           random_tensor({1, 3, 2, 2}, rng)),
                       random_tensor({1, 5, 2, 2}, rng)) < kTol);
  const Tensor mid = random_tensor({1, 2, 2, 2}, rng);
  CHECK(gradient_check(project_output(
                           [&](GradTape& t, Var x) {
                             return t.concat_channels({x, t.leaf(mid), x});
                           },
                           random_tensor({1, 8, 2, 2}, rng)),
                       random_tensor({1, 3, 2, 2}, rng)) < kTol);
  CHECK(gradient_check(project_output([](GradTape& t, Var x) { return t.chw_to_tokens(x); },
                                      random_tensor({6, 3}, rng)),
                       random_tensor({1, 3, 2, 3}, rng)) < kTol);
  CHECK(gradient_check(project_output(
                           [](GradTape& t, Var x) { return t.tokens_to_chw(x, 3, 2, 3); },
                           random_tensor({1, 3, 2, 3}, rng)),
                       random_tensor({6, 3}, rng)) < kTol);
}

TEST_CASE("taped loss ops propagate scaled upstreams") {
  fga::Rng rng(2);
  const Tensor target = random_tensor({2, 3, 4}, rng);
  const Tensor pred = random_tensor({2, 3, 4}, rng);  // same kink-free pair as test_losses
  CHECK(gradient_check(
            [&](GradTape& t, Var x) { return t.scale(t.l1_freq_loss(x, target), -2.5); },
            pred) < kTol);

  const Tensor target2 = kink_free_tensor({3, 4}, rng);
  CHECK(gradient_check(
            [&](GradTape& t, Var x) { return t.scale(t.l1_pixel_loss(x, target2), 3.0); },
            Tensor::zeros({3, 4})) < kTol);
}

TEST_CASE("zero upstream produces zero gradients everywhere") {
  fga::Rng rng(31);
  const Tensor x0 = random_tensor({1, 4, 3, 3}, rng);
  GradTape tape;
  const Var x = tape.leaf(x0);
  const Var w = tape.leaf(random_tensor({4, 4, 3, 3}, rng));
  const Var b = tape.leaf(random_tensor({4}, rng));
  const Var y = tape.gelu(tape.conv2d(x, w, b, 1, 1));
  tape.backward(tape.scale(tape.sum_all(y), 0.0));
  for (const Var v : {x, w, b}) {
    for (double g : tape.grad(v).values()) CHECK(g == 0.0);
  }
}

TEST_CASE("backward resets gradients between calls") {
  Tensor x0({2});
  x0.values() = {1.0, 2.0};
  GradTape tape;
  const Var x = tape.leaf(x0);
  const Var y = tape.sum_all(tape.mul(x, x));
  tape.backward(y);
  const Tensor first = tape.grad(x);
  tape.backward(y);
  CHECK(tape.grad(x).values() == first.values());  // no accumulation across calls
  CHECK(first.values() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("finite_diff_gradient itself is sane on a quadratic") {
  Tensor x0({3});
  x0.values() = {1.0, -2.0, 0.5};
  const Tensor g = fga::finite_diff_gradient(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.values()) s += v * v;
        return s;
      },
      x0, 1e-5);
  CHECK(std::abs(g.values()[0] - 2.0) < 1e-8);
  CHECK(std::abs(g.values()[1] + 4.0) < 1e-8);
  CHECK(std::abs(g.values()[2] - 1.0) < 1e-8);
}

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fga/grad.hpp"
#include "fga/tensor.hpp"

namespace testutil {

inline fga::Tensor random_tensor(const std::vector<std::int64_t>& shape, fga::Rng& rng,
                                 double lo = -1.0, double hi = 1.0) {
  fga::Tensor t(shape);
  rng.fill_uniform(t, lo, hi);
  return t;
}

inline double max_abs_diff(const fga::Tensor& a, const fga::Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

/// Relative error with an absolute floor, matching the gradient
/// certification tolerance scheme.
inline double max_rel_err(const fga::Tensor& a, const fga::Tensor& b, double floor = 1e-8) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const double x = a.values()[i];
    const double y = b.values()[i];
    const double denom = std::max(floor, std::max(std::abs(x), std::abs(y)));
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

using ScalarBuilder = std::function<fga::Var(fga::GradTape&, fga::Var)>;

/// Analytic gradient of a taped scalar-valued function of one tensor input.
inline fga::Tensor analytic_gradient(const ScalarBuilder& build, const fga::Tensor& x0) {
  fga::GradTape tape;
  const fga::Var x = tape.leaf(x0);
  const fga::Var y = build(tape, x);
  tape.backward(y);
  return tape.grad(x);
}

inline double forward_value(const ScalarBuilder& build, const fga::Tensor& x0) {
  fga::GradTape tape;
  const fga::Var x = tape.leaf(x0);
  const fga::Var y = build(tape, x);
  return tape.value(y).values()[0];
}

inline fga::Tensor numeric_gradient(const ScalarBuilder& build, const fga::Tensor& x0,
                                    double eps = 1e-5) {
  return fga::finite_diff_gradient(
      [&](const fga::Tensor& t) { return forward_value(build, t); }, x0, eps);
}

/// Central-difference certification of a taped scalar function: analytic vs
/// numeric gradient, relative error with 1e-8 floor.
inline double gradient_check(const ScalarBuilder& build, const fga::Tensor& x0,
                             double eps = 1e-5) {
  return max_rel_err(analytic_gradient(build, x0), numeric_gradient(build, x0, eps));
}

/// Reduce an arbitrary-shaped taped output to a scalar through a fixed
/// random projection so the upstream gradient exercised is generic.
inline ScalarBuilder project_output(
    const std::function<fga::Var(fga::GradTape&, fga::Var)>& op, const fga::Tensor& weights) {
  return [op, weights](fga::GradTape& tape, fga::Var x) {
    const fga::Var y = op(tape, x);
    const fga::Var w = tape.leaf(weights);
    return tape.sum_all(tape.mul(y, w));
  };
}

}  // namespace testutil

#pragma once

#include <functional>

#include "fga/tensor.hpp"

namespace fga {

/// Handle to a node recorded on a GradTape.
struct Var {
  std::int64_t id = -1;
};

/// Reverse-mode tape. Nodes are appended in forward order, so walking the
/// list backwards visits operations in exact reverse order of the forward
/// pass (creation order is a topological order). Values live on the tape;
/// gradients are materialized by backward().
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Record an input/parameter node. Gradients accumulate into every leaf.
  Var leaf(Tensor value);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() call; zeros before any call.
  const Tensor& grad(Var v) const;
  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

  /// Seed the scalar loss node with upstream gradient 1 and sweep the tape.
  void backward(Var loss);
  /// General form: seed with an explicit upstream gradient (same shape as
  /// the loss node's value).
  void backward(Var loss, const Tensor& seed);

  // -- elementwise / reduction ----------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var abs(Var a);
  Var gelu(Var a);
  Var cos_pi(Var a);  // cos(pi * x)
  Var sin_pi(Var a);  // sin(pi * x)
  Var sum_all(Var a);
  Var mean_all(Var a);

  // -- matrix / token ops ---------------------------------------------------
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  /// x: T x Cin, w: Cout x Cin, b: Cout  ->  T x Cout (x w^T + b rows).
  Var linear(Var x, Var w, Var b);
  /// x: T x Cin, w: Cout x Cin  ->  T x Cout, no bias.
  Var project(Var x, Var w);
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps);

  // -- spatial ops (rank-4 N x C x H x W) -----------------------------------
  Var conv2d(Var x, Var w, Var b, std::int64_t stride, std::int64_t padding);
  Var transposed_conv2d(Var x, Var w, Var b, std::int64_t stride);
  Var pixel_shuffle(Var x, std::int64_t r);
  Var pixel_unshuffle(Var x, std::int64_t r);
  Var nn_interp(Var x, std::int64_t r);
  Var reflection_pad2d(Var x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                       std::int64_t right);
  Var crop2d(Var x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right);
  /// Embed into a zero canvas grown by the given margins (adjoint of crop2d).
  Var zero_pad2d(Var x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                 std::int64_t right);

  // -- reshuffling ----------------------------------------------------------
  Var reshape(Var a, std::vector<std::int64_t> shape);
  /// Contiguous slice [start, start+count) along dim 0, any rank.
  Var slice_dim0(Var a, std::int64_t start, std::int64_t count);
  /// Pick channels (dim 1 of rank-4 x) in the given order.
  Var gather_channels(Var x, std::vector<std::int64_t> channels);
  /// Concatenate rank-4 tensors along dim 1.
  Var concat_channels(const std::vector<Var>& parts);
  /// 1 x C x H x W -> (H*W) x C token matrix, token index i*W + j.
  Var chw_to_tokens(Var x);
  /// Inverse of chw_to_tokens.
  Var tokens_to_chw(Var x, std::int64_t c, std::int64_t h, std::int64_t w);

  // -- fused losses (target is a constant) ----------------------------------
  Var l1_pixel_loss(Var pred, Tensor target);
  Var l1_freq_loss(Var pred, Tensor target);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(GradTape&)> pull;  // empty for leaves
  };

  Var push(Tensor value, std::function<void(GradTape&)> pull);
  Node& node(Var v);
  const Node& node(Var v) const;
  void accumulate(Var v, const Tensor& delta);

  std::vector<Node> nodes_;
};

/// Central finite differences (f(x+eps e) - f(x-eps e)) / (2 eps) per
/// element. f must be deterministic and finite near x.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double eps = 1e-5);

}  // namespace fga

#include "fga/grad.hpp"

#include <cmath>
#include <utility>

#include "fga/losses.hpp"
#include "fga/ops.hpp"

namespace fga {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_rank(const Tensor& t, std::int64_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     t.shape_str());
  }
}

// Plain rank-2 matrix products for the attention VJPs.
Tensor mat_nn(const Tensor& a, const Tensor& b) {
  const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) throw ShapeError("matmul: inner extents differ");
  Tensor out({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      for (std::int64_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
    }
  return out;
}

Tensor mat_nt(const Tensor& a, const Tensor& b) {  // a * b^T
  const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  if (b.extent(1) != k) throw ShapeError("matmul: inner extents differ");
  Tensor out({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
      out.at(i, j) = s;
    }
  return out;
}

Tensor mat_tn(const Tensor& a, const Tensor& b) {  // a^T * b
  const std::int64_t m = a.extent(1), k = a.extent(0), n = b.extent(1);
  if (b.extent(0) != k) throw ShapeError("matmul: inner extents differ");
  Tensor out({m, n});
  for (std::int64_t p = 0; p < k; ++p)
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = a.at(p, i);
      if (av == 0.0) continue;
      for (std::int64_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
    }
  return out;
}

}  // namespace

Var GradTape::push(Tensor value, std::function<void(GradTape&)> pull) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(pull)});
  return Var{static_cast<std::int64_t>(nodes_.size()) - 1};
}

GradTape::Node& GradTape::node(Var v) {
  if (v.id < 0 || v.id >= size()) throw ShapeError("GradTape: stale or foreign Var handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const GradTape::Node& GradTape::node(Var v) const {
  if (v.id < 0 || v.id >= size()) throw ShapeError("GradTape: stale or foreign Var handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var GradTape::leaf(Tensor value) { return push(std::move(value), nullptr); }

const Tensor& GradTape::value(Var v) const { return node(v).value; }

const Tensor& GradTape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.numel() == 0) throw ShapeError("GradTape::grad: backward() has not run");
  return n.grad;
}

void GradTape::accumulate(Var v, const Tensor& delta) {
  Node& n = node(v);
  if (!n.value.same_shape(delta)) {
    throw ShapeError("GradTape: gradient shape " + delta.shape_str() + " does not match value " +
                     n.value.shape_str());
  }
  for (std::int64_t i = 0; i < delta.numel(); ++i) n.grad[i] += delta[i];
}

void GradTape::backward(Var loss) {
  if (node(loss).value.numel() != 1) throw ShapeError("GradTape::backward: loss must be scalar");
  backward(loss, Tensor::full(node(loss).value.shape(), 1.0));
}

void GradTape::backward(Var loss, const Tensor& seed) {
  Node& ln = node(loss);
  if (!ln.value.same_shape(seed)) {
    throw ShapeError("GradTape::backward: seed shape " + seed.shape_str() + " vs loss " +
                     ln.value.shape_str());
  }
  for (Node& n : nodes_) n.grad = Tensor(n.value.shape());
  ln.grad = seed;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].pull) nodes_[i].pull(*this);
  }
}

Var GradTape::add(Var a, Var b) {
  Tensor v = fga::add(value(a), value(b));
  const std::int64_t self = size();
  return push(std::move(v), [self, a, b](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var GradTape::sub(Var a, Var b) {
  Tensor v = fga::sub(value(a), value(b));
  const std::int64_t self = size();
  return push(std::move(v), [self, a, b](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(a, g);
    t.accumulate(b, fga::scale(g, -1.0));
  });
}

Var GradTape::mul(Var a, Var b) {
  Tensor v = fga::mul(value(a), value(b));
  const std::int64_t self = size();
  return push(std::move(v), [self, a, b](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(a, fga::mul(g, t.value(b)));
    t.accumulate(b, fga::mul(g, t.value(a)));
  });
}

Var GradTape::scale(Var a, double s) {
  Tensor v = fga::scale(value(a), s);
  const std::int64_t self = size();
  return push(std::move(v), [self, a, s](GradTape& t) {
    t.accumulate(a, fga::scale(t.nodes_[static_cast<std::size_t>(self)].grad, s));
  });
}

Var GradTape::abs(Var a) {
  const Tensor& x = value(a);
  Tensor v(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) v[i] = std::fabs(x[i]);
  const std::int64_t self = size();
  return push(std::move(v), [self, a](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& x = t.value(a);
    Tensor d(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) d[i] = g[i] * sign0(x[i]);
    t.accumulate(a, d);
  });
}

Var GradTape::gelu(Var a) {
  const Tensor& x = value(a);
  Tensor v(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    v[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  }
  const std::int64_t self = size();
  return push(std::move(v), [self, a](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& x = t.value(a);
    Tensor d(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      d[i] = g[i] * (cdf + x[i] * pdf);
    }
    t.accumulate(a, d);
  });
}

Var GradTape::cos_pi(Var a) {
  const Tensor& x = value(a);
  Tensor v(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) v[i] = std::cos(kPi * x[i]);
  const std::int64_t self = size();
  return push(std::move(v), [self, a](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& x = t.value(a);
    Tensor d(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) d[i] = -kPi * std::sin(kPi * x[i]) * g[i];
    t.accumulate(a, d);
  });
}

Var GradTape::sin_pi(Var a) {
  const Tensor& x = value(a);
  Tensor v(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) v[i] = std::sin(kPi * x[i]);
  const std::int64_t self = size();
  return push(std::move(v), [self, a](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& x = t.value(a);
    Tensor d(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) d[i] = kPi * std::cos(kPi * x[i]) * g[i];
    t.accumulate(a, d);
  });
}

Var GradTape::sum_all(Var a) {
  Tensor v({1}, {fga::sum(value(a))});
  const std::int64_t self = size();
  return push(std::move(v), [self, a](GradTape& t) {
    const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    t.accumulate(a, Tensor::full(t.value(a).shape(), g));
  });
}

Var GradTape::mean_all(Var a) {
  const double inv = 1.0 / static_cast<double>(value(a).numel());
  Tensor v({1}, {fga::sum(value(a)) * inv});
  const std::int64_t self = size();
  return push(std::move(v), [self, a, inv](GradTape& t) {
    const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    t.accumulate(a, Tensor::full(t.value(a).shape(), g * inv));
  });
}

Var GradTape::matmul(Var a, Var b) {
  require_rank(value(a), 2, "matmul");
  require_rank(value(b), 2, "matmul");
  Tensor v = mat_nn(value(a), value(b));
  const std::int64_t self = size();
  return push(std::move(v), [self, a, b](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(a, mat_nt(g, t.value(b)));
    t.accumulate(b, mat_tn(t.value(a), g));
  });
}

Var GradTape::transpose(Var a) {
  const Tensor& x = value(a);
  require_rank(x, 2, "transpose");
  const std::int64_t m = x.extent(0), n = x.extent(1);
  Tensor v({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) v.at(j, i) = x.at(i, j);
  const std::int64_t self = size();
  return push(std::move(v), [self, a, m, n](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    Tensor d({m, n});
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) d.at(i, j) = g.at(j, i);
    t.accumulate(a, d);
  });
}

Var GradTape::linear(Var x, Var w, Var b) {
  require_rank(value(x), 2, "linear");
  require_rank(value(w), 2, "linear");
  require_rank(value(b), 1, "linear");
  if (value(w).extent(1) != value(x).extent(1) || value(b).extent(0) != value(w).extent(0)) {
    throw ShapeError("linear: shapes " + value(x).shape_str() + ", " + value(w).shape_str() + ", " +
                     value(b).shape_str() + " are inconsistent");
  }
  Tensor v = mat_nt(value(x), value(w));
  const std::int64_t t_n = v.extent(0), c_out = v.extent(1);
  for (std::int64_t i = 0; i < t_n; ++i)
    for (std::int64_t j = 0; j < c_out; ++j) v.at(i, j) += value(b)[j];
  const std::int64_t self = size();
  return push(std::move(v), [self, x, w, b, t_n, c_out](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(x, mat_nn(g, t.value(w)));
    t.accumulate(w, mat_tn(g, t.value(x)));
    Tensor gb({c_out});
    for (std::int64_t i = 0; i < t_n; ++i)
      for (std::int64_t j = 0; j < c_out; ++j) gb[j] += g.at(i, j);
    t.accumulate(b, gb);
  });
}

Var GradTape::project(Var x, Var w) {
  require_rank(value(x), 2, "project");
  require_rank(value(w), 2, "project");
  if (value(w).extent(1) != value(x).extent(1)) {
    throw ShapeError("project: shapes " + value(x).shape_str() + " and " + value(w).shape_str() +
                     " are inconsistent");
  }
  Tensor v = mat_nt(value(x), value(w));
  const std::int64_t self = size();
  return push(std::move(v), [self, x, w](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(x, mat_nn(g, t.value(w)));
    t.accumulate(w, mat_tn(g, t.value(x)));
  });
}

Var GradTape::softmax_rows(Var a) {
  const Tensor& x = value(a);
  require_rank(x, 2, "softmax_rows");
  const std::int64_t t_n = x.extent(0), k_n = x.extent(1);
  Tensor v({t_n, k_n});
  for (std::int64_t i = 0; i < t_n; ++i) {
    double mx = x.at(i, 0);
    for (std::int64_t j = 1; j < k_n; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (std::int64_t j = 0; j < k_n; ++j) {
      const double e = std::exp(x.at(i, j) - mx);
      v.at(i, j) = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < k_n; ++j) v.at(i, j) /= denom;
  }
  const std::int64_t self = size();
  return push(std::move(v), [self, a, t_n, k_n](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
    Tensor d({t_n, k_n});
    for (std::int64_t i = 0; i < t_n; ++i) {
      double dotv = 0.0;
      for (std::int64_t j = 0; j < k_n; ++j) dotv += g.at(i, j) * y.at(i, j);
      for (std::int64_t j = 0; j < k_n; ++j) d.at(i, j) = y.at(i, j) * (g.at(i, j) - dotv);
    }
    t.accumulate(a, d);
  });
}

Var GradTape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = value(x);
  require_rank(xv, 2, "layer_norm_rows");
  const std::int64_t t_n = xv.extent(0), c_n = xv.extent(1);
  if (value(gamma).numel() != c_n || value(beta).numel() != c_n) {
    throw ShapeError("layer_norm_rows: gain/offset must have length " + std::to_string(c_n));
  }
  Tensor v({t_n, c_n});
  for (std::int64_t i = 0; i < t_n; ++i) {
    double mu = 0.0;
    for (std::int64_t j = 0; j < c_n; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(c_n);
    double var = 0.0;
    for (std::int64_t j = 0; j < c_n; ++j) {
      const double d = xv.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c_n);
    const double ivar = 1.0 / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < c_n; ++j) {
      v.at(i, j) = value(gamma)[j] * (xv.at(i, j) - mu) * ivar + value(beta)[j];
    }
  }
  const std::int64_t self = size();
  return push(std::move(v), [self, x, gamma, beta, eps, t_n, c_n](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& xv = t.value(x);
    const Tensor& gam = t.value(gamma);
    Tensor dx({t_n, c_n});
    Tensor dgam({c_n});
    Tensor dbet({c_n});
    const double invc = 1.0 / static_cast<double>(c_n);
    for (std::int64_t i = 0; i < t_n; ++i) {
      double mu = 0.0;
      for (std::int64_t j = 0; j < c_n; ++j) mu += xv.at(i, j);
      mu *= invc;
      double var = 0.0;
      for (std::int64_t j = 0; j < c_n; ++j) {
        const double d = xv.at(i, j) - mu;
        var += d * d;
      }
      var *= invc;
      const double ivar = 1.0 / std::sqrt(var + eps);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::int64_t j = 0; j < c_n; ++j) {
        const double xhat = (xv.at(i, j) - mu) * ivar;
        const double dxhat = g.at(i, j) * gam[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        dgam[j] += g.at(i, j) * xhat;
        dbet[j] += g.at(i, j);
      }
      for (std::int64_t j = 0; j < c_n; ++j) {
        const double xhat = (xv.at(i, j) - mu) * ivar;
        const double dxhat = g.at(i, j) * gam[j];
        dx.at(i, j) = ivar * (dxhat - invc * sum_dxhat - xhat * invc * sum_dxhat_xhat);
      }
    }
    t.accumulate(x, dx);
    t.accumulate(gamma, dgam);
    t.accumulate(beta, dbet);
  });
}

Var GradTape::conv2d(Var x, Var w, Var b, std::int64_t stride, std::int64_t padding) {
  require_rank(value(x), 4, "taped conv2d");
  Tensor v = fga::conv2d(value(x), value(w), value(b), stride, padding);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, w, b, stride, padding](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const std::int64_t n_n = xv.extent(0), c_in = xv.extent(1), h = xv.extent(2), w_e = xv.extent(3);
    const std::int64_t c_out = wv.extent(0), kh = wv.extent(2), kw = wv.extent(3);
    const std::int64_t oh = g.extent(2), ow = g.extent(3);

    // Input gradient: the transposed convolution with the same weight bytes
    // (its Cin x Cout reading of Cout x Cin flips the roles), cropped by the
    // forward padding.
    Tensor gx = fga::transposed_conv2d(g, wv, Tensor({c_in}), stride);
    if (padding > 0) gx = fga::crop2d(gx, padding, padding, padding, padding);
    t.accumulate(x, gx);

    Tensor xpad({n_n, c_in, h + 2 * padding, w_e + 2 * padding});
    for (std::int64_t n = 0; n < n_n; ++n)
      for (std::int64_t c = 0; c < c_in; ++c)
        for (std::int64_t i = 0; i < h; ++i)
          for (std::int64_t j = 0; j < w_e; ++j)
            xpad.at(n, c, i + padding, j + padding) = xv.at(n, c, i, j);

    Tensor gw(wv.shape());
    Tensor gb({c_out});
    for (std::int64_t n = 0; n < n_n; ++n) {
      for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t i = 0; i < oh; ++i) {
          for (std::int64_t j = 0; j < ow; ++j) {
            const double gv = g.at(n, co, i, j);
            if (gv == 0.0) continue;
            gb[co] += gv;
            for (std::int64_t ci = 0; ci < c_in; ++ci)
              for (std::int64_t ky = 0; ky < kh; ++ky)
                for (std::int64_t kx = 0; kx < kw; ++kx)
                  gw.at(co, ci, ky, kx) += gv * xpad.at(n, ci, i * stride + ky, j * stride + kx);
          }
        }
      }
    }
    t.accumulate(w, gw);
    t.accumulate(b, gb);
  });
}

Var GradTape::transposed_conv2d(Var x, Var w, Var b, std::int64_t stride) {
  require_rank(value(x), 4, "taped transposed_conv2d");
  Tensor v = fga::transposed_conv2d(value(x), value(w), value(b), stride);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, w, b, stride](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const std::int64_t n_n = xv.extent(0), c_in = xv.extent(1), h = xv.extent(2), w_e = xv.extent(3);
    const std::int64_t c_out = wv.extent(1), kh = wv.extent(2), kw = wv.extent(3);

    // Input gradient is a stride-s valid correlation of g with the same
    // weight bytes (Cin x Cout read as conv2d's Cout x Cin).
    t.accumulate(x, fga::conv2d(g, wv, Tensor({c_in}), stride, 0));

    Tensor gw(wv.shape());
    Tensor gb({c_out});
    for (std::int64_t n = 0; n < n_n; ++n) {
      for (std::int64_t ci = 0; ci < c_in; ++ci) {
        for (std::int64_t i = 0; i < h; ++i) {
          for (std::int64_t j = 0; j < w_e; ++j) {
            const double xvv = xv.at(n, ci, i, j);
            if (xvv == 0.0) continue;
            for (std::int64_t co = 0; co < c_out; ++co)
              for (std::int64_t ky = 0; ky < kh; ++ky)
                for (std::int64_t kx = 0; kx < kw; ++kx)
                  gw.at(ci, co, ky, kx) += xvv * g.at(n, co, i * stride + ky, j * stride + kx);
          }
        }
      }
    }
    for (std::int64_t n = 0; n < n_n; ++n)
      for (std::int64_t co = 0; co < c_out; ++co)
        for (std::int64_t i = 0; i < g.extent(2); ++i)
          for (std::int64_t j = 0; j < g.extent(3); ++j) gb[co] += g.at(n, co, i, j);
    t.accumulate(w, gw);
    t.accumulate(b, gb);
  });
}

Var GradTape::pixel_shuffle(Var x, std::int64_t r) {
  Tensor v = fga::pixel_shuffle(value(x), r);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, r](GradTape& t) {
    t.accumulate(x, fga::pixel_unshuffle(t.nodes_[static_cast<std::size_t>(self)].grad, r));
  });
}

Var GradTape::pixel_unshuffle(Var x, std::int64_t r) {
  Tensor v = fga::pixel_unshuffle(value(x), r);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, r](GradTape& t) {
    t.accumulate(x, fga::pixel_shuffle(t.nodes_[static_cast<std::size_t>(self)].grad, r));
  });
}

Var GradTape::nn_interp(Var x, std::int64_t r) {
  Tensor v = fga::nn_interp(value(x), r);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, r](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(x, fga::scale(fga::block_mean_downsample(g, r), static_cast<double>(r * r)));
  });
}

Var GradTape::reflection_pad2d(Var x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                               std::int64_t right) {
  Tensor v = fga::reflection_pad2d(value(x), top, bottom, left, right);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, top, left](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& xv = t.value(x);
    const std::int64_t h = xv.extent(xv.rank() - 2), w = xv.extent(xv.rank() - 1);
    const std::int64_t oh = g.extent(g.rank() - 2), ow = g.extent(g.rank() - 1);
    const std::int64_t planes = xv.numel() / (h * w);
    Tensor d(xv.shape());
    auto reflect = [](std::int64_t i, std::int64_t n) {
      while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
      }
      return i;
    };
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* gs = g.data() + p * oh * ow;
      double* ds = d.data() + p * h * w;
      for (std::int64_t i = 0; i < oh; ++i) {
        const std::int64_t si = reflect(i - top, h);
        for (std::int64_t j = 0; j < ow; ++j) {
          ds[si * w + reflect(j - left, w)] += gs[i * ow + j];
        }
      }
    }
    t.accumulate(x, d);
  });
}

Var GradTape::crop2d(Var x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                     std::int64_t right) {
  Tensor v = fga::crop2d(value(x), top, bottom, left, right);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, top, left](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    const Tensor& xv = t.value(x);
    const std::int64_t h = xv.extent(xv.rank() - 2), w = xv.extent(xv.rank() - 1);
    const std::int64_t oh = g.extent(g.rank() - 2), ow = g.extent(g.rank() - 1);
    const std::int64_t planes = xv.numel() / (h * w);
    Tensor d(xv.shape());
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* gs = g.data() + p * oh * ow;
      double* ds = d.data() + p * h * w;
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) ds[(i + top) * w + (j + left)] = gs[i * ow + j];
    }
    t.accumulate(x, d);
  });
}

Var GradTape::zero_pad2d(Var x, std::int64_t top, std::int64_t bottom, std::int64_t left,
                         std::int64_t right) {
  const Tensor& xv = value(x);
  if (xv.rank() < 2) throw ShapeError("zero_pad2d: need at least 2 dims");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("zero_pad2d: negative pad");
  const std::int64_t h = xv.extent(xv.rank() - 2), w = xv.extent(xv.rank() - 1);
  std::vector<std::int64_t> oshape = xv.shape();
  const std::int64_t oh = h + top + bottom, ow = w + left + right;
  oshape[oshape.size() - 2] = oh;
  oshape[oshape.size() - 1] = ow;
  Tensor v(oshape);
  const std::int64_t planes = xv.numel() / (h * w);
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = v.data() + p * oh * ow;
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) dst[(i + top) * ow + (j + left)] = src[i * w + j];
  }
  const std::int64_t self = size();
  return push(std::move(v), [self, x, top, bottom, left, right](GradTape& t) {
    t.accumulate(x, fga::crop2d(t.nodes_[static_cast<std::size_t>(self)].grad, top, bottom, left,
                                right));
  });
}

Var GradTape::slice_dim0(Var a, std::int64_t start, std::int64_t count) {
  const Tensor& x = value(a);
  if (x.rank() < 1) throw ShapeError("slice_dim0: need rank >= 1");
  if (start < 0 || count < 1 || start + count > x.extent(0)) {
    throw ShapeError("slice_dim0: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + x.shape_str());
  }
  const std::int64_t inner = x.numel() / x.extent(0);
  std::vector<std::int64_t> oshape = x.shape();
  oshape[0] = count;
  Tensor v(oshape);
  for (std::int64_t i = 0; i < count * inner; ++i) v[i] = x[start * inner + i];
  const std::int64_t self = size();
  return push(std::move(v), [self, a, start, count, inner](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    Tensor d(t.value(a).shape());
    for (std::int64_t i = 0; i < count * inner; ++i) d[start * inner + i] = g[i];
    t.accumulate(a, d);
  });
}

Var GradTape::reshape(Var a, std::vector<std::int64_t> shape) {
  const Tensor& x = value(a);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: element count changes from " + x.shape_str());
  }
  Tensor v(shape, std::vector<double>(x.values()));
  const std::int64_t self = size();
  return push(std::move(v), [self, a](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    t.accumulate(a, Tensor(t.value(a).shape(), std::vector<double>(g.values())));
  });
}

Var GradTape::gather_channels(Var x, std::vector<std::int64_t> channels) {
  const Tensor& xv = value(x);
  require_rank(xv, 4, "gather_channels");
  const std::int64_t n_n = xv.extent(0), c_n = xv.extent(1), h = xv.extent(2), w = xv.extent(3);
  for (std::int64_t c : channels) {
    if (c < 0 || c >= c_n) throw ShapeError("gather_channels: index out of range");
  }
  const std::int64_t k = static_cast<std::int64_t>(channels.size());
  Tensor v({n_n, k, h, w});
  for (std::int64_t n = 0; n < n_n; ++n)
    for (std::int64_t i = 0; i < k; ++i)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t z = 0; z < w; ++z)
          v.at(n, i, y, z) = xv.at(n, channels[static_cast<std::size_t>(i)], y, z);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, channels = std::move(channels), n_n, h, w, k](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    Tensor d(t.value(x).shape());
    for (std::int64_t n = 0; n < n_n; ++n)
      for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t z = 0; z < w; ++z)
            d.at(n, channels[static_cast<std::size_t>(i)], y, z) += g.at(n, i, y, z);
    t.accumulate(x, d);
  });
}

Var GradTape::concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty part list");
  const Tensor& first = value(parts[0]);
  require_rank(first, 4, "concat_channels");
  const std::int64_t n_n = first.extent(0), h = first.extent(2), w = first.extent(3);
  std::int64_t c_total = 0;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    require_rank(pv, 4, "concat_channels");
    if (pv.extent(0) != n_n || pv.extent(2) != h || pv.extent(3) != w) {
      throw ShapeError("concat_channels: incompatible part shape " + pv.shape_str());
    }
    c_total += pv.extent(1);
  }
  Tensor v({n_n, c_total, h, w});
  std::int64_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    for (std::int64_t n = 0; n < n_n; ++n)
      for (std::int64_t c = 0; c < pv.extent(1); ++c)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t z = 0; z < w; ++z) v.at(n, off + c, y, z) = pv.at(n, c, y, z);
    off += pv.extent(1);
  }
  const std::int64_t self = size();
  return push(std::move(v), [self, parts, n_n, h, w](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    std::int64_t off = 0;
    for (Var p : parts) {
      const std::int64_t pc = t.value(p).extent(1);
      Tensor d(t.value(p).shape());
      for (std::int64_t n = 0; n < n_n; ++n)
        for (std::int64_t c = 0; c < pc; ++c)
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t z = 0; z < w; ++z) d.at(n, c, y, z) = g.at(n, off + c, y, z);
      t.accumulate(p, d);
      off += pc;
    }
  });
}

Var GradTape::chw_to_tokens(Var x) {
  const Tensor& xv = value(x);
  require_rank(xv, 4, "chw_to_tokens");
  if (xv.extent(0) != 1) throw ShapeError("chw_to_tokens: batch extent must be 1");
  const std::int64_t c_n = xv.extent(1), h = xv.extent(2), w = xv.extent(3);
  Tensor v({h * w, c_n});
  for (std::int64_t c = 0; c < c_n; ++c)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) v.at(i * w + j, c) = xv.at(0, c, i, j);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, c_n, h, w](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    Tensor d({1, c_n, h, w});
    for (std::int64_t c = 0; c < c_n; ++c)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) d.at(0, c, i, j) = g.at(i * w + j, c);
    t.accumulate(x, d);
  });
}

Var GradTape::tokens_to_chw(Var x, std::int64_t c, std::int64_t h, std::int64_t w) {
  const Tensor& xv = value(x);
  require_rank(xv, 2, "tokens_to_chw");
  if (xv.extent(0) != h * w || xv.extent(1) != c) {
    throw ShapeError("tokens_to_chw: token matrix " + xv.shape_str() + " does not match " +
                     std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor v({1, c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) v.at(0, ch, i, j) = xv.at(i * w + j, ch);
  const std::int64_t self = size();
  return push(std::move(v), [self, x, c, h, w](GradTape& t) {
    const Tensor& g = t.nodes_[static_cast<std::size_t>(self)].grad;
    Tensor d({h * w, c});
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) d.at(i * w + j, ch) = g.at(0, ch, i, j);
    t.accumulate(x, d);
  });
}

Var GradTape::l1_pixel_loss(Var pred, Tensor target) {
  LossValue lv = fga::l1_pixel(value(pred), target, true);
  const std::int64_t self = size();
  return push(Tensor({1}, {lv.value}), [self, pred, grad = std::move(lv.gradient)](GradTape& t) {
    const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    t.accumulate(pred, fga::scale(grad, g));
  });
}

Var GradTape::l1_freq_loss(Var pred, Tensor target) {
  LossValue lv = fga::l1_freq(value(pred), target, true);
  const std::int64_t self = size();
  return push(Tensor({1}, {lv.value}), [self, pred, grad = std::move(lv.gradient)](GradTape& t) {
    const double g = t.nodes_[static_cast<std::size_t>(self)].grad[0];
    t.accumulate(pred, fga::scale(grad, g));
  });
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double eps) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_gradient: non-finite evaluation at element " +
                         std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace fga

#include "osdsr/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "osdsr/error.hpp"

namespace osdsr::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void accumulate(Node& parent, const Tensor& g) {
  if (!parent.requires_grad) return;
  Tensor& dst = parent.grad_buffer();
  double* d = dst.ptr();
  const double* s = g.ptr();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + " expects rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

template <class F>
Var unary(const Var& a, F&& fwd_and_deriv) {
  // fwd_and_deriv(x, &y, &dy_dx)
  const Tensor& x = a.value();
  Tensor y(x.shape());
  Tensor d(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) fwd_and_deriv(x[i], y[i], d[i]);
  return make_result(std::move(y), {a}, [d = std::move(d)](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * d[i];
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  bool any = false;
  for (const Var& p : parents) any = any || p.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (const Var& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward_fn = std::move(backward_fn);
  }
  return out;
}

void backward(const Var& root) {
  if (!root.defined() || root.value().numel() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "backward() needs a single-element root");
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Intermediate gradients are released; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Tensor();
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    Node& q = *n.parents[1];
    if (!q.requires_grad) return;
    Tensor& g = q.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& n) {
    Node& p = *n.parents[0];
    Node& q = *n.parents[1];
    if (p.requires_grad) {
      Tensor& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * q.value[i];
    }
    if (q.requires_grad) {
      Tensor& g = q.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * p.value[i];
    }
  });
}

Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

Var affine(const Var& a, double m, double shift) {
  Tensor y = a.value();
  for (double& v : y.data()) v = v * m + shift;
  return make_result(std::move(y), {a}, [m](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * m;
  });
}

Var square(const Var& a) {
  return unary(a, [](double x, double& y, double& d) {
    y = x * x;
    d = 2.0 * x;
  });
}

Var sqrt(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v >= 0.0)) throw Error(ErrorKind::Numeric, "sqrt of negative or NaN value");
  }
  return unary(a, [](double x, double& y, double& d) {
    y = std::sqrt(x);
    d = y > 0.0 ? 0.5 / y : 0.0;
  });
}

Var reciprocal(const Var& a) {
  for (double v : a.value().data()) {
    if (v == 0.0 || !std::isfinite(v)) throw Error(ErrorKind::Numeric, "reciprocal of zero or non-finite value");
  }
  return unary(a, [](double x, double& y, double& d) {
    y = 1.0 / x;
    d = -y * y;
  });
}

Var sigmoid(const Var& a) {
  return unary(a, [](double x, double& y, double& d) {
    y = 1.0 / (1.0 + std::exp(-x));
    d = y * (1.0 - y);
  });
}

Var silu(const Var& a) {
  return unary(a, [](double x, double& y, double& d) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    y = x * s;
    d = s * (1.0 + x * (1.0 - s));
  });
}

Var clamp01(const Var& a) {
  return unary(a, [](double x, double& y, double& d) {
    y = std::clamp(x, 0.0, 1.0);
    d = (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0;
  });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_result(Tensor::scalar(s), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    const double g0 = n.grad[0];
    for (double& g : p.grad_buffer().data()) g += g0;
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / count);
}

// ---------------------------------------------------------------------- shape

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_result(std::move(y), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  require_rank(x, 4, "concat_channels");
  require_rank(z, 4, "concat_channels");
  if (x.dim(0) != z.dim(0) || x.dim(2) != z.dim(2) || x.dim(3) != z.dim(3)) {
    throw Error(ErrorKind::ShapeMismatch, "concat_channels: " + shape_str(x.shape()) + " vs " + shape_str(z.shape()));
  }
  const int B = x.dim(0), ca = x.dim(1), cb = z.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({B, ca + cb, x.dim(2), x.dim(3)});
  for (int bi = 0; bi < B; ++bi) {
    std::copy_n(x.ptr() + bi * ca * hw, ca * hw, y.ptr() + bi * (ca + cb) * hw);
    std::copy_n(z.ptr() + bi * cb * hw, cb * hw, y.ptr() + (bi * (ca + cb) + ca) * hw);
  }
  return make_result(std::move(y), {a, b}, [B, ca, cb, hw](Node& n) {
    Node& p = *n.parents[0];
    Node& q = *n.parents[1];
    for (int bi = 0; bi < B; ++bi) {
      const double* src = n.grad.ptr() + bi * (ca + cb) * hw;
      if (p.requires_grad) {
        double* g = p.grad_buffer().ptr() + bi * ca * hw;
        for (std::size_t i = 0; i < ca * hw; ++i) g[i] += src[i];
      }
      if (q.requires_grad) {
        double* g = q.grad_buffer().ptr() + bi * cb * hw;
        for (std::size_t i = 0; i < cb * hw; ++i) g[i] += src[ca * hw + i];
      }
    }
  });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  require_rank(x, 2, "matmul");
  require_rank(w, 2, "matmul");
  if (x.dim(1) != w.dim(0)) {
    throw Error(ErrorKind::ShapeMismatch, "matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  const int M = x.dim(0), K = x.dim(1), N = w.dim(1);
  Tensor y({M, N});
  MapMat(y.ptr(), M, N).noalias() = CMapMat(x.ptr(), M, K) * CMapMat(w.ptr(), K, N);
  return make_result(std::move(y), {a, b}, [M, K, N](Node& n) {
    Node& p = *n.parents[0];
    Node& q = *n.parents[1];
    CMapMat dy(n.grad.ptr(), M, N);
    if (p.requires_grad) {
      MapMat(p.grad_buffer().ptr(), M, K).noalias() += dy * CMapMat(q.value.ptr(), K, N).transpose();
    }
    if (q.requires_grad) {
      MapMat(q.grad_buffer().ptr(), K, N).noalias() += CMapMat(p.value.ptr(), M, K).transpose() * dy;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 2, "linear");
  require_rank(wv, 2, "linear");
  if (xv.dim(1) != wv.dim(1)) {
    throw Error(ErrorKind::ShapeMismatch, "linear: input " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
  }
  const int B = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  const bool has_bias = bias.defined();
  Tensor y({B, out});
  MapMat ym(y.ptr(), B, out);
  ym.noalias() = CMapMat(xv.ptr(), B, in) * CMapMat(wv.ptr(), out, in).transpose();
  if (has_bias) {
    for (int bi = 0; bi < B; ++bi)
      for (int o = 0; o < out; ++o) ym(bi, o) += bias.value()[o];
  }
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(y), std::move(parents), [B, in, out, has_bias](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    CMapMat dy(n.grad.ptr(), B, out);
    if (px.requires_grad) {
      MapMat(px.grad_buffer().ptr(), B, in).noalias() += dy * CMapMat(pw.value.ptr(), out, in);
    }
    if (pw.requires_grad) {
      MapMat(pw.grad_buffer().ptr(), out, in).noalias() += dy.transpose() * CMapMat(px.value.ptr(), B, in);
    }
    if (has_bias && n.parents[2]->requires_grad) {
      Tensor& gb = n.parents[2]->grad_buffer();
      for (int bi = 0; bi < B; ++bi)
        for (int o = 0; o < out; ++o) gb[o] += dy(bi, o);
    }
  });
}

// ------------------------------------------------------------------ image ops

namespace {

struct ConvGeom {
  int C, H, W, k, stride, pad, Ho, Wo;
  int ck() const { return C * k * k; }
  int hw_out() const { return Ho * Wo; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const int hw = g.hw_out();
  for (int c = 0; c < g.C; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * hw;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= g.H) {
            std::fill_n(dst, g.Wo, 0.0);
            continue;
          }
          const double* src = img + (static_cast<std::size_t>(c) * g.H + iy) * g.W;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* img) {
  const int hw = g.hw_out();
  for (int c = 0; c < g.C; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * hw;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.H) continue;
          double* dst = img + (static_cast<std::size_t>(c) * g.H + iy) * g.W;
          const double* src = row + oy * g.Wo;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 4, "conv2d");
  if (kernel < 1 || stride < 1 || pad < 0) throw Error(ErrorKind::InvalidRange, "conv2d geometry");
  ConvGeom g{xv.dim(1), xv.dim(2), xv.dim(3), kernel, stride, pad, 0, 0};
  g.Ho = (g.H + 2 * pad - kernel) / stride + 1;
  g.Wo = (g.W + 2 * pad - kernel) / stride + 1;
  if (g.Ho < 1 || g.Wo < 1) {
    throw Error(ErrorKind::ShapeMismatch, "conv2d input " + shape_str(xv.shape()) + " smaller than kernel");
  }
  const int cout = wv.dim(0);
  if (wv.numel() != static_cast<std::size_t>(cout) * g.ck()) {
    throw Error(ErrorKind::ShapeMismatch,
                "conv2d weight " + shape_str(wv.shape()) + " for input " + shape_str(xv.shape()));
  }
  const bool has_bias = bias.defined();
  const int B = xv.dim(0);
  const int hw = g.hw_out();
  const std::size_t in_stride = static_cast<std::size_t>(g.C) * g.H * g.W;
  Tensor cols({B, g.ck(), hw});
  Tensor y({B, cout, g.Ho, g.Wo});
  CMapMat wm(wv.ptr(), cout, g.ck());
  for (int bi = 0; bi < B; ++bi) {
    double* col = cols.ptr() + static_cast<std::size_t>(bi) * g.ck() * hw;
    im2col(xv.ptr() + bi * in_stride, g, col);
    MapMat ym(y.ptr() + static_cast<std::size_t>(bi) * cout * hw, cout, hw);
    ym.noalias() = wm * CMapMat(col, g.ck(), hw);
    if (has_bias) {
      for (int o = 0; o < cout; ++o) ym.row(o).array() += bias.value()[o];
    }
  }
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(y), std::move(parents),
                     [g, B, cout, hw, in_stride, has_bias, cols = std::move(cols)](Node& n) {
                       Node& px = *n.parents[0];
                       Node& pw = *n.parents[1];
                       CMapMat wm(pw.value.ptr(), cout, g.ck());
                       RowMat dcol;
                       for (int bi = 0; bi < B; ++bi) {
                         CMapMat dy(n.grad.ptr() + static_cast<std::size_t>(bi) * cout * hw, cout, hw);
                         CMapMat col(cols.ptr() + static_cast<std::size_t>(bi) * g.ck() * hw, g.ck(), hw);
                         if (pw.requires_grad) {
                           MapMat(pw.grad_buffer().ptr(), cout, g.ck()).noalias() += dy * col.transpose();
                         }
                         if (has_bias && n.parents[2]->requires_grad) {
                           Tensor& gb = n.parents[2]->grad_buffer();
                           for (int o = 0; o < cout; ++o) gb[o] += dy.row(o).sum();
                         }
                         if (px.requires_grad) {
                           dcol.noalias() = wm.transpose() * dy;
                           col2im_add(dcol.data(), g, px.grad_buffer().ptr() + bi * in_stride);
                         }
                       }
                     });
}

Var avg_pool2(const Var& x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "avg_pool2");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H % 2 || W % 2) throw Error(ErrorKind::Divisibility, "avg_pool2 needs even spatial dims, got " + shape_str(xv.shape()));
  const int Ho = H / 2, Wo = W / 2;
  Tensor y({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
          y.at(b, c, i, j) = 0.25 * (xv.at(b, c, 2 * i, 2 * j) + xv.at(b, c, 2 * i, 2 * j + 1) +
                                     xv.at(b, c, 2 * i + 1, 2 * j) + xv.at(b, c, 2 * i + 1, 2 * j + 1));
  return make_result(std::move(y), {x}, [B, C, Ho, Wo](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j) {
            const double d = 0.25 * n.grad.at(b, c, i, j);
            g.at(b, c, 2 * i, 2 * j) += d;
            g.at(b, c, 2 * i, 2 * j + 1) += d;
            g.at(b, c, 2 * i + 1, 2 * j) += d;
            g.at(b, c, 2 * i + 1, 2 * j + 1) += d;
          }
  });
}

Var upsample_nearest2(const Var& x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "upsample_nearest2");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor y({B, C, 2 * H, 2 * W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j) y.at(b, c, i, j) = xv.at(b, c, i / 2, j / 2);
  return make_result(std::move(y), {x}, [B, C, H, W](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < 2 * H; ++i)
          for (int j = 0; j < 2 * W; ++j) g.at(b, c, i / 2, j / 2) += n.grad.at(b, c, i, j);
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "global_avg_pool");
  const int B = xv.dim(0), C = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor y({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* src = xv.ptr() + (static_cast<std::size_t>(b) * C + c) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += src[i];
      y[static_cast<std::size_t>(b) * C + c] = s / static_cast<double>(hw);
    }
  return make_result(std::move(y), {x}, [B, C, hw](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const double d = n.grad[static_cast<std::size_t>(b) * C + c] / static_cast<double>(hw);
        double* dst = g.ptr() + (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] += d;
      }
  });
}

Var add_channel_bias(const Var& x, const Var& v) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "add_channel_bias");
  const int B = xv.dim(0), C = xv.dim(1);
  if (v.value().shape() != Shape{B, C}) {
    throw Error(ErrorKind::ShapeMismatch, "add_channel_bias: " + shape_str(xv.shape()) + " with " + shape_str(v.shape()));
  }
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor y = xv;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double add = v.value()[static_cast<std::size_t>(b) * C + c];
      double* dst = y.ptr() + (static_cast<std::size_t>(b) * C + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += add;
    }
  return make_result(std::move(y), {x, v}, [B, C, hw](Node& n) {
    accumulate(*n.parents[0], n.grad);
    Node& q = *n.parents[1];
    if (!q.requires_grad) return;
    Tensor& g = q.grad_buffer();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const double* src = n.grad.ptr() + (static_cast<std::size_t>(b) * C + c) * hw;
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
        g[static_cast<std::size_t>(b) * C + c] += s;
      }
  });
}

namespace {

struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    const double f = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

Var bilinear_resize(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw Error(ErrorKind::InvalidRange, "bilinear_resize target must be positive");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  auto ty = bilinear_taps(H, out_h);
  auto tx = bilinear_taps(W, out_w);
  Tensor y({B, C, out_h, out_w});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < out_h; ++i) {
        const Tap& a = ty[static_cast<std::size_t>(i)];
        for (int j = 0; j < out_w; ++j) {
          const Tap& t = tx[static_cast<std::size_t>(j)];
          y.at(b, c, i, j) = a.w0 * (t.w0 * xv.at(b, c, a.i0, t.i0) + t.w1 * xv.at(b, c, a.i0, t.i1)) +
                             a.w1 * (t.w0 * xv.at(b, c, a.i1, t.i0) + t.w1 * xv.at(b, c, a.i1, t.i1));
        }
      }
  return make_result(std::move(y), {x}, [B, C, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < out_h; ++i) {
          const Tap& a = ty[static_cast<std::size_t>(i)];
          for (int j = 0; j < out_w; ++j) {
            const Tap& t = tx[static_cast<std::size_t>(j)];
            const double d = n.grad.at(b, c, i, j);
            g.at(b, c, a.i0, t.i0) += d * a.w0 * t.w0;
            g.at(b, c, a.i0, t.i1) += d * a.w0 * t.w1;
            g.at(b, c, a.i1, t.i0) += d * a.w1 * t.w0;
            g.at(b, c, a.i1, t.i1) += d * a.w1 * t.w1;
          }
        }
  });
}

Var normalize_channels(const Var& x, double eps) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "normalize_channels");
  const int B = xv.dim(0), C = xv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor y(xv.shape());
  Tensor inv_norm({B, 1, xv.dim(2), xv.dim(3)});
  for (int b = 0; b < B; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      double s = eps;
      for (int c = 0; c < C; ++c) {
        const double v = xv[(static_cast<std::size_t>(b) * C + c) * hw + p];
        s += v * v;
      }
      const double r = 1.0 / std::sqrt(s);
      inv_norm[b * hw + p] = r;
      for (int c = 0; c < C; ++c) {
        const std::size_t idx = (static_cast<std::size_t>(b) * C + c) * hw + p;
        y[idx] = xv[idx] * r;
      }
    }
  return make_result(std::move(y), {x}, [B, C, hw, inv_norm = std::move(inv_norm)](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    // d(x r)/dx = r (I - y y^T)
    for (int b = 0; b < B; ++b)
      for (std::size_t q = 0; q < hw; ++q) {
        const double r = inv_norm[b * hw + q];
        double dot = 0.0;
        for (int c = 0; c < C; ++c) {
          const std::size_t idx = (static_cast<std::size_t>(b) * C + c) * hw + q;
          dot += n.grad[idx] * n.value[idx];
        }
        for (int c = 0; c < C; ++c) {
          const std::size_t idx = (static_cast<std::size_t>(b) * C + c) * hw + q;
          g[idx] += r * (n.grad[idx] - n.value[idx] * dot);
        }
      }
  });
}

// -------------------------------------------------------------------- row ops

Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "softmax_rows");
  const int B = xv.dim(0), N = xv.dim(1);
  Tensor y(xv.shape());
  for (int b = 0; b < B; ++b) {
    const double* src = xv.ptr() + static_cast<std::size_t>(b) * N;
    double* dst = y.ptr() + static_cast<std::size_t>(b) * N;
    const double mx = *std::max_element(src, src + N);
    double s = 0.0;
    for (int i = 0; i < N; ++i) s += (dst[i] = std::exp(src[i] - mx));
    for (int i = 0; i < N; ++i) dst[i] /= s;
  }
  return make_result(std::move(y), {x}, [B, N](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int b = 0; b < B; ++b) {
      const double* yv = n.value.ptr() + static_cast<std::size_t>(b) * N;
      const double* dy = n.grad.ptr() + static_cast<std::size_t>(b) * N;
      double dot = 0.0;
      for (int i = 0; i < N; ++i) dot += dy[i] * yv[i];
      for (int i = 0; i < N; ++i) g[static_cast<std::size_t>(b) * N + i] += yv[i] * (dy[i] - dot);
    }
  });
}

Var cosine_rows(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "cosine_rows");
  require_rank(a.value(), 2, "cosine_rows");
  const int B = a.value().dim(0), D = a.value().dim(1);
  Tensor y({B});
  Tensor stats({B, 3});  // dot, |a|, |b|
  for (int r = 0; r < B; ++r) {
    const double* u = a.value().ptr() + static_cast<std::size_t>(r) * D;
    const double* v = b.value().ptr() + static_cast<std::size_t>(r) * D;
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (int i = 0; i < D; ++i) {
      dot += u[i] * v[i];
      nu += u[i] * u[i];
      nv += v[i] * v[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (!(nu > 0.0) || !(nv > 0.0)) throw Error(ErrorKind::ZeroNorm, "cosine similarity of a zero vector");
    y[static_cast<std::size_t>(r)] = dot / (nu * nv);
    stats[static_cast<std::size_t>(r) * 3] = dot;
    stats[static_cast<std::size_t>(r) * 3 + 1] = nu;
    stats[static_cast<std::size_t>(r) * 3 + 2] = nv;
  }
  return make_result(std::move(y), {a, b}, [B, D, stats = std::move(stats)](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    for (int r = 0; r < B; ++r) {
      const double dot = stats[static_cast<std::size_t>(r) * 3];
      const double nu = stats[static_cast<std::size_t>(r) * 3 + 1];
      const double nv = stats[static_cast<std::size_t>(r) * 3 + 2];
      const double c = dot / (nu * nv);
      const double go = n.grad[static_cast<std::size_t>(r)];
      const double* u = pa.value.ptr() + static_cast<std::size_t>(r) * D;
      const double* v = pb.value.ptr() + static_cast<std::size_t>(r) * D;
      // dc/du = v/(|u||v|) - c u/|u|^2
      if (pa.requires_grad) {
        double* g = pa.grad_buffer().ptr() + static_cast<std::size_t>(r) * D;
        for (int i = 0; i < D; ++i) g[i] += go * (v[i] / (nu * nv) - c * u[i] / (nu * nu));
      }
      if (pb.requires_grad) {
        double* g = pb.grad_buffer().ptr() + static_cast<std::size_t>(r) * D;
        for (int i = 0; i < D; ++i) g[i] += go * (u[i] / (nu * nv) - c * v[i] / (nv * nv));
      }
    }
  });
}

Var scale_rows(const Var& x, const Var& s) {
  const Tensor& xv = x.value();
  const int B = xv.dim(0);
  if (s.value().shape() != Shape{B}) {
    throw Error(ErrorKind::ShapeMismatch, "scale_rows: " + shape_str(xv.shape()) + " by " + shape_str(s.shape()));
  }
  const std::size_t row = xv.numel() / static_cast<std::size_t>(B);
  Tensor y = xv;
  for (int b = 0; b < B; ++b) {
    const double f = s.value()[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < row; ++i) y[b * row + i] *= f;
  }
  return make_result(std::move(y), {x, s}, [B, row](Node& n) {
    Node& px = *n.parents[0];
    Node& ps = *n.parents[1];
    for (int b = 0; b < B; ++b) {
      const double f = ps.value[static_cast<std::size_t>(b)];
      if (px.requires_grad) {
        double* g = px.grad_buffer().ptr() + b * row;
        for (std::size_t i = 0; i < row; ++i) g[i] += n.grad[b * row + i] * f;
      }
      if (ps.requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < row; ++i) acc += n.grad[b * row + i] * px.value[b * row + i];
        ps.grad_buffer()[static_cast<std::size_t>(b)] += acc;
      }
    }
  });
}

Var straight_through(Tensor hard, const Var& soft) {
  require_same_shape(hard, soft.value(), "straight_through");
  return make_result(std::move(hard), {soft}, [](Node& n) { accumulate(*n.parents[0], n.grad); });
}

}  // namespace osdsr::ag

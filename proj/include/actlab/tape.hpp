#pragma once

// Reverse-mode differentiation over a flat tape of dense tensor ops.
//
// Values are computed eagerly when an op is recorded. backward() walks the
// tape once in reverse creation order, which is a topological order by
// construction, seeding the scalar root with 1. Everything is single-threaded
// with fixed reduction orders, so gradients are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "actlab/tensor.hpp"

namespace actlab {

class Tape;

/// Handle to a tensor node living on a tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Tensor grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, {}, nullptr, "leaf");
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// C[m,n] = A[m,k] * B[k,n].
  Var matmul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
      throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) + " and " +
                       shape_str(B.shape));
    std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor C = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double av = A.data[i * k + p];
        for (std::size_t j = 0; j < n; ++j)
          C.data[i * n + j] += av * B.data[p * n + j];
      }
    auto back = [m, k, n](Tape& t, const BackCtx& c) {
      const Tensor& A = t.val_by_id(c.parents[0]);
      const Tensor& B = t.val_by_id(c.parents[1]);
      if (t.wants_grad(c.parents[0])) {
        std::vector<double>& dA = t.grad_buf(c.parents[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              acc += c.out_grad[i * n + j] * B.data[p * n + j];
            dA[i * k + p] += acc;
          }
      }
      if (t.wants_grad(c.parents[1])) {
        std::vector<double>& dB = t.grad_buf(c.parents[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double av = A.data[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
              dB[p * n + j] += av * c.out_grad[i * n + j];
          }
      }
    };
    return push(std::move(C), false, {a.id_, b.id_}, back, "matmul");
  }

  /// 2-D transpose.
  Var transpose(Var x) {
    const Tensor& X = val(x);
    if (X.rank() != 2) throw ShapeError("transpose: need rank 2, got " + shape_str(X.shape));
    std::size_t r = X.dim(0), c = X.dim(1);
    Tensor Y = Tensor::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        Y.data[j * r + i] = X.data[i * c + j];
    auto back = [r, c](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          dX[i * c + j] += ctx.out_grad[j * r + i];
    };
    return push(std::move(Y), false, {x.id_}, back, "transpose");
  }

  /// Cross-correlation of x[N,C,H,W] with w[F,C,kH,kW], zero padding.
  Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
    const Tensor& X = val(x);
    const Tensor& W = val(w);
    if (X.rank() != 4 || W.rank() != 4)
      throw ShapeError("conv2d: need x rank 4 and w rank 4, got " + shape_str(X.shape) +
                       " and " + shape_str(W.shape));
    if (X.dim(1) != W.dim(1))
      throw ShapeError("conv2d: channel mismatch " + shape_str(X.shape) + " vs " +
                       shape_str(W.shape));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    std::size_t F = W.dim(0), kH = W.dim(2), kW = W.dim(3);
    if (kH > H + 2 * pad || kW > Wd + 2 * pad)
      throw ShapeError("conv2d: kernel " + shape_str(W.shape) + " larger than padded input " +
                       shape_str(X.shape));
    if ((H + 2 * pad - kH) % stride != 0 || (Wd + 2 * pad - kW) % stride != 0)
      throw ShapeError("conv2d: non-integral output size for input " + shape_str(X.shape) +
                       ", kernel " + shape_str(W.shape) + ", stride " + std::to_string(stride) +
                       ", pad " + std::to_string(pad));
    std::size_t Ho = (H + 2 * pad - kH) / stride + 1;
    std::size_t Wo = (Wd + 2 * pad - kW) / stride + 1;
    Tensor Y = Tensor::zeros({N, F, Ho, Wo});
    auto xat = [&](std::size_t n, std::size_t c, std::size_t h, std::size_t v) {
      return X.data[((n * C + c) * H + h) * Wd + v];
    };
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t kh = 0; kh < kH; ++kh) {
                std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                    static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kw = 0; kw < kW; ++kw) {
                  std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                      static_cast<std::ptrdiff_t>(pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(Wd)) continue;
                  acc += xat(n, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) *
                         W.data[((f * C + c) * kH + kh) * kW + kw];
                }
              }
            Y.data[((n * F + f) * Ho + oh) * Wo + ow] = acc;
          }
    auto back = [N, C, H, Wd, F, kH, kW, Ho, Wo, stride, pad](Tape& t, const BackCtx& ctx) {
      const Tensor& X = t.val_by_id(ctx.parents[0]);
      const Tensor& W = t.val_by_id(ctx.parents[1]);
      bool wx = t.wants_grad(ctx.parents[0]);
      bool ww = t.wants_grad(ctx.parents[1]);
      if (!wx && !ww) return;
      std::vector<double>* dX = wx ? &t.grad_buf(ctx.parents[0]) : nullptr;
      std::vector<double>* dW = ww ? &t.grad_buf(ctx.parents[1]) : nullptr;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              double g = ctx.out_grad[((n * F + f) * Ho + oh) * Wo + ow];
              if (g == 0.0) continue;
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t kh = 0; kh < kH; ++kh) {
                  std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                      static_cast<std::ptrdiff_t>(pad);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t kw = 0; kw < kW; ++kw) {
                    std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                        static_cast<std::ptrdiff_t>(pad);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(Wd)) continue;
                    std::size_t xi = ((n * C + c) * H + static_cast<std::size_t>(ih)) * Wd +
                                     static_cast<std::size_t>(iw);
                    std::size_t wi = ((f * C + c) * kH + kh) * kW + kw;
                    if (dX) (*dX)[xi] += W.data[wi] * g;
                    if (dW) (*dW)[wi] += X.data[xi] * g;
                  }
                }
            }
    };
    return push(std::move(Y), false, {x.id_, w.id_}, back, "conv2d");
  }

  /// 2x2 max pooling with stride 2; spatial dims must be even.
  Var maxpool2(Var x) {
    const Tensor& X = val(x);
    if (X.rank() != 4) throw ShapeError("maxpool2: need rank 4, got " + shape_str(X.shape));
    std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
      throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(X.shape));
    std::size_t Ho = H / 2, Wo = W / 2;
    Tensor Y = Tensor::zeros({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(Y.numel());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_i = 0;
            for (std::size_t dh = 0; dh < 2; ++dh)
              for (std::size_t dw = 0; dw < 2; ++dw) {
                std::size_t xi = ((n * C + c) * H + 2 * oh + dh) * W + 2 * ow + dw;
                if (X.data[xi] > best) {  // first max wins on ties
                  best = X.data[xi];
                  best_i = xi;
                }
              }
            std::size_t yi = ((n * C + c) * Ho + oh) * Wo + ow;
            Y.data[yi] = best;
            (*argmax)[yi] = best_i;
          }
    auto back = [argmax](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i)
        dX[(*argmax)[i]] += ctx.out_grad[i];
    };
    return push(std::move(Y), false, {x.id_}, back, "maxpool2");
  }

  /// Elementwise max(x, 0); subgradient at 0 is 0.
  Var relu(Var x) {
    const Tensor& X = val(x);
    Tensor Y = X;
    for (double& v : Y.data) v = v > 0.0 ? v : 0.0;
    auto back = [](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      const Tensor& X = t.val_by_id(ctx.parents[0]);
      std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i)
        if (X.data[i] > 0.0) dX[i] += ctx.out_grad[i];
    };
    return push(std::move(Y), false, {x.id_}, back, "relu");
  }

  /// x[N,D] + b[D], or x[N,F,H,W] + b[F] broadcast over batch and space.
  Var add_bias(Var x, Var b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    if (B.rank() != 1) throw ShapeError("add_bias: bias must be rank 1, got " + shape_str(B.shape));
    std::size_t ch_dim;
    if (X.rank() == 2) ch_dim = X.dim(1);
    else if (X.rank() == 4) ch_dim = X.dim(1);
    else throw ShapeError("add_bias: x must be rank 2 or 4, got " + shape_str(X.shape));
    if (ch_dim != B.dim(0))
      throw ShapeError("add_bias: bias " + shape_str(B.shape) + " does not match " +
                       shape_str(X.shape));
    std::size_t inner = X.rank() == 4 ? X.dim(2) * X.dim(3) : 1;
    std::size_t n = X.dim(0), c = ch_dim;
    Tensor Y = X;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t k = 0; k < inner; ++k)
          Y.data[(i * c + j) * inner + k] += B.data[j];
    auto back = [n, c, inner](Tape& t, const BackCtx& ctx) {
      if (t.wants_grad(ctx.parents[0])) {
        std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
        for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) dX[i] += ctx.out_grad[i];
      }
      if (t.wants_grad(ctx.parents[1])) {
        std::vector<double>& dB = t.grad_buf(ctx.parents[1]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            for (std::size_t k = 0; k < inner; ++k)
              dB[j] += ctx.out_grad[(i * c + j) * inner + k];
      }
    };
    return push(std::move(Y), false, {x.id_, b.id_}, back, "add_bias");
  }

  /// Rowwise log-probabilities of logits[N,C], max-shifted so the result is
  /// always finite on finite input.
  Var log_softmax(Var logits) {
    const Tensor& X = val(logits);
    if (X.rank() != 2 || X.dim(1) < 2)
      throw ShapeError("log_softmax: need [N,C] with C >= 2, got " + shape_str(X.shape));
    std::size_t n = X.dim(0), c = X.dim(1);
    Tensor Y = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      double m = X.data[i * c];
      for (std::size_t j = 1; j < c; ++j) m = std::max(m, X.data[i * c + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(X.data[i * c + j] - m);
      double lz = std::log(z);
      for (std::size_t j = 0; j < c; ++j) Y.data[i * c + j] = X.data[i * c + j] - m - lz;
    }
    auto back = [n, c](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      const Tensor& Y = t.val_by_id(ctx.self);
      std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += ctx.out_grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          dX[i * c + j] += ctx.out_grad[i * c + j] - std::exp(Y.data[i * c + j]) * s;
      }
    };
    return push(std::move(Y), false, {logits.id_}, back, "log_softmax");
  }

  /// out[i] = rows[i, index[i]].
  Var pick(Var rows, const std::vector<std::size_t>& index) {
    const Tensor& X = val(rows);
    if (X.rank() != 2) throw ShapeError("pick: need rank 2, got " + shape_str(X.shape));
    std::size_t n = X.dim(0), c = X.dim(1);
    if (index.size() != n)
      throw ShapeError("pick: index count " + std::to_string(index.size()) +
                       " does not match rows " + shape_str(X.shape));
    Tensor Y = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
      if (index[i] >= c)
        throw std::invalid_argument("pick: index " + std::to_string(index[i]) +
                                    " out of range [0," + std::to_string(c) + ")");
      Y.data[i] = X.data[i * c + index[i]];
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(index);
    auto back = [idx, c](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i)
        dX[i * c + (*idx)[i]] += ctx.out_grad[i];
    };
    return push(std::move(Y), false, {rows.id_}, back, "pick");
  }

  /// out[i] = sum_c weights[i,c] * x[i,c]; weights enter as constants.
  Var rowdot(Var x, Tensor weights) {
    const Tensor& X = val(x);
    if (X.rank() != 2) throw ShapeError("rowdot: need rank 2, got " + shape_str(X.shape));
    ensure_same_shape(X, weights, "rowdot");
    std::size_t n = X.dim(0), c = X.dim(1);
    Tensor Y = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += weights.data[i * c + j] * X.data[i * c + j];
      Y.data[i] = acc;
    }
    auto w = std::make_shared<Tensor>(std::move(weights));
    auto back = [w, c](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i)
        for (std::size_t j = 0; j < c; ++j)
          dX[i * c + j] += w->data[i * c + j] * ctx.out_grad[i];
    };
    return push(std::move(Y), false, {x.id_}, back, "rowdot");
  }

  Var reshape(Var x, Shape s) {
    const Tensor& X = val(x);
    if (shape_numel(s) != X.numel())
      throw ShapeError("reshape: cannot view " + shape_str(X.shape) + " as " + shape_str(s));
    Tensor Y(std::move(s), X.data);
    auto back = [](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& dX = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) dX[i] += ctx.out_grad[i];
    };
    return push(std::move(Y), false, {x.id_}, back, "reshape");
  }

  Var add(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    ensure_same_shape(A, B, "add");
    Tensor Y = A;
    for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] += B.data[i];
    auto back = [](Tape& t, const BackCtx& ctx) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (!t.wants_grad(ctx.parents[p])) continue;
        std::vector<double>& d = t.grad_buf(ctx.parents[p]);
        for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) d[i] += ctx.out_grad[i];
      }
    };
    return push(std::move(Y), false, {a.id_, b.id_}, back, "add");
  }

  /// x + c with a constant tensor of identical shape.
  Var add_const(Var x, const Tensor& c) {
    const Tensor& X = val(x);
    ensure_same_shape(X, c, "add_const");
    Tensor Y = X;
    for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] += c.data[i];
    auto back = [](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& d = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) d[i] += ctx.out_grad[i];
    };
    return push(std::move(Y), false, {x.id_}, back, "add_const");
  }

  Var scale(Var x, double c) {
    Tensor Y = val(x);
    for (double& v : Y.data) v *= c;
    auto back = [c](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& d = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) d[i] += c * ctx.out_grad[i];
    };
    return push(std::move(Y), false, {x.id_}, back, "scale");
  }

  /// Sum of all elements, as a scalar.
  Var sum(Var x) {
    const Tensor& X = val(x);
    double acc = 0.0;
    for (double v : X.data) acc += v;
    auto back = [](Tape& t, const BackCtx& ctx) {
      if (!t.wants_grad(ctx.parents[0])) return;
      std::vector<double>& d = t.grad_buf(ctx.parents[0]);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += ctx.out_grad[0];
    };
    return push(Tensor::scalar(acc), false, {x.id_}, back, "sum");
  }

  /// Accumulate chain-rule gradients into every grad-requiring node reachable
  /// from root. Leaves off any path to root keep zero gradients.
  void backward(Var root) {
    if (root.tape_ != this) throw std::invalid_argument("backward: root from another tape");
    Node& r = nodes_[root.id_];
    if (r.value.numel() != 1)
      throw std::invalid_argument("backward: root must be scalar, got " +
                                  shape_str(r.value.shape));
    for (Node& n : nodes_) {
      n.grad.assign(n.grad.size(), 0.0);
      n.touched = false;
    }
    grad_buf(root.id_)[0] = 1.0;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.touched || !n.requires_grad || !n.backprop) continue;
      BackCtx ctx{n.grad, n.parents, i};
      n.backprop(*this, ctx);
    }
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id_).value; }

  /// Gradient of the last backward root with respect to v (zeros if untouched).
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id_);
    if (n.grad.empty()) return Tensor::zeros(n.value.shape);
    return Tensor(n.value.shape, n.grad);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct BackCtx {
    const std::vector<double>& out_grad;
    const std::vector<std::size_t>& parents;
    std::size_t self;
  };
  using BackFn = std::function<void(Tape&, const BackCtx&)>;

  struct Node {
    Tensor value;
    std::vector<double> grad;  // empty until touched by backward
    std::vector<std::size_t> parents;
    BackFn backprop;
    bool requires_grad = false;
    bool touched = false;
  };

  const Tensor& val(Var v) const {
    if (v.tape_ != this) throw std::invalid_argument("op: argument from another tape");
    return nodes_[v.id_].value;
  }
  const Tensor& val_by_id(std::size_t id) const { return nodes_[id].value; }

  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  std::vector<double>& grad_buf(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
    n.touched = true;
    return n.grad;
  }

  Var push(Tensor value, bool leaf_requires_grad, std::vector<std::size_t> parents, BackFn back,
           const char* op, bool check_finite = true) {
    if (check_finite) ensure_all_finite(value, op);
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.requires_grad = leaf_requires_grad;
    for (std::size_t p : n.parents)
      if (nodes_[p].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backprop = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline Tensor Var::grad() const { return tape_->grad(*this); }

}  // namespace actlab

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wsical/diffcore/tape.hpp"
#include "wsical/diffcore/tensor.hpp"

// Differentiable primitives. Every op takes and returns matrices (rank <= 2)
// and records a closure that maps the output gradient onto its inputs.

namespace wsical::ad {

namespace detail {

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
  return a.tape();
}

template <typename T>
[[noreturn]] void shape_mismatch(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape) + " and " +
                   to_string(b.shape));
}

template <typename T>
Tensor<T> like(const Tensor<T>& t) {
  return Tensor<T>::matrix(t.rows(), t.cols());
}

/// Elementwise op: f(x) forward, df(x, y) = dy/dx for the backward pass.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  const Tensor<T>& x = a.value();
  Tensor<T> out = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, df](Tape<T>& t, std::size_t self) {
    Tensor<T>* ga = t.accumulate(ia);
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(ia);
    const Tensor<T>& yv = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> identity(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b, "matmul");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.cols() != B.rows()) detail::shape_mismatch("matmul", A, B);
  Tensor<T> out = Tensor<T>::matrix(A.rows(), B.cols());
  out.map().noalias() = A.map() * B.map();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) {
                         ga->map().noalias() += g.map() * t.value(ib).map().transpose();
                       }
                       if (Tensor<T>* gb = t.accumulate(ib)) {
                         gb->map().noalias() += t.value(ia).map().transpose() * g.map();
                       }
                     });
}

/// a * b^T, for attention scores.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b, "matmul_nt");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.cols() != B.cols()) detail::shape_mismatch("matmul_nt", A, B);
  Tensor<T> out = Tensor<T>::matrix(A.rows(), B.rows());
  out.map().noalias() = A.map() * B.map().transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) {
                         ga->map().noalias() += g.map() * t.value(ib).map();
                       }
                       if (Tensor<T>* gb = t.accumulate(ib)) {
                         gb->map().noalias() += g.map().transpose() * t.value(ia).map();
                       }
                     });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b, "add");
  if (a.shape() != b.shape()) detail::shape_mismatch("add", a.value(), b.value());
  Tensor<T> out = a.value();
  out.map() += b.value().map();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) ga->map() += g.map();
                       if (Tensor<T>* gb = t.accumulate(ib)) gb->map() += g.map();
                     });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b, "sub");
  if (a.shape() != b.shape()) detail::shape_mismatch("sub", a.value(), b.value());
  Tensor<T> out = a.value();
  out.map() -= b.value().map();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) ga->map() += g.map();
                       if (Tensor<T>* gb = t.accumulate(ib)) gb->map() -= g.map();
                     });
}

/// Hadamard product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b, "mul");
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.value(), b.value());
  Tensor<T> out = a.value();
  out.map().array() *= b.value().map().array();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) {
                         ga->map().array() += g.map().array() * t.value(ib).map().array();
                       }
                       if (Tensor<T>* gb = t.accumulate(ib)) {
                         gb->map().array() += g.map().array() * t.value(ia).map().array();
                       }
                     });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

/// a[m x n] + row[1 x n], row broadcast down the rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  Tape<T>& tape = detail::same_tape(a, row, "add_row");
  const Tensor<T>& A = a.value();
  const Tensor<T>& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) detail::shape_mismatch("add_row", A, R);
  Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
  out.map() = A.map().rowwise() + R.map().row(0);
  const std::size_t ia = a.id(), ir = row.id();
  return tape.record(std::move(out), a.requires_grad() || row.requires_grad(),
                     [ia, ir](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) ga->map() += g.map();
                       if (Tensor<T>* gr = t.accumulate(ir)) gr->map() += g.map().colwise().sum();
                     });
}

/// a[m x n] * row[1 x n] elementwise per row.
template <typename T>
Var<T> mul_row(const Var<T>& a, const Var<T>& row) {
  Tape<T>& tape = detail::same_tape(a, row, "mul_row");
  const Tensor<T>& A = a.value();
  const Tensor<T>& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) detail::shape_mismatch("mul_row", A, R);
  Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
  out.map().array() = A.map().array().rowwise() * R.map().row(0).array();
  const std::size_t ia = a.id(), ir = row.id();
  return tape.record(std::move(out), a.requires_grad() || row.requires_grad(),
                     [ia, ir](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) {
                         ga->map().array() += g.map().array().rowwise() * t.value(ir).map().row(0).array();
                       }
                       if (Tensor<T>* gr = t.accumulate(ir)) {
                         gr->map() += (g.map().array() * t.value(ia).map().array()).matrix().colwise().sum();
                       }
                     });
}

/// a[m x n] * col[m x 1], each row scaled by one coefficient.
template <typename T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
  Tape<T>& tape = detail::same_tape(a, col, "mul_col");
  const Tensor<T>& A = a.value();
  const Tensor<T>& C = col.value();
  if (C.cols() != 1 || C.rows() != A.rows()) detail::shape_mismatch("mul_col", A, C);
  Tensor<T> out = Tensor<T>::matrix(A.rows(), A.cols());
  out.map().array() = A.map().array().colwise() * C.map().col(0).array();
  const std::size_t ia = a.id(), ic = col.id();
  return tape.record(std::move(out), a.requires_grad() || col.requires_grad(),
                     [ia, ic](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       if (Tensor<T>* ga = t.accumulate(ia)) {
                         ga->map().array() += g.map().array().colwise() * t.value(ic).map().col(0).array();
                       }
                       if (Tensor<T>* gc = t.accumulate(ic)) {
                         gc->map() += (g.map().array() * t.value(ia).map().array()).matrix().rowwise().sum();
                       }
                     });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x > T{0} ? x : T{0}; },
                       [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return detail::unary(a, [slope](T x) { return x > T{0} ? x : slope * x; },
                       [slope](T x, T) { return x > T{0} ? T{1} : slope; });
}

/// ELU with alpha = 1.
template <typename T>
Var<T> elu(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x > T{0} ? x : std::expm1(x); },
                       [](T x, T y) { return x > T{0} ? T{1} : y + T{1}; });
}

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary(
      a, [](T x) { return T(0.5) * x * (T{1} + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T{1} + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(
      a,
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

/// Row-wise softmax with max subtraction.
template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  Tensor<T> out = detail::like(x);
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t r = 0; r < m; ++r) {
    const T* xr = &x.data[r * n];
    T* yr = &out.data[r * n];
    const T mx = *std::max_element(xr, xr + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < n; ++c) yr[c] /= total;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, m, n](Tape<T>& t, std::size_t self) {
    Tensor<T>* ga = t.accumulate(ia);
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    for (std::size_t r = 0; r < m; ++r) {
      const T* gr = &g.data[r * n];
      const T* yr = &y.data[r * n];
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += gr[c] * yr[c];
      T* dr = &ga->data[r * n];
      for (std::size_t c = 0; c < n; ++c) dr[c] += yr[c] * (gr[c] - dot);
    }
  });
}

namespace detail {

// Rows [r0, r0 + rb) of softmax(q k^T * scale).
template <typename T>
typename Tensor<T>::Matrix attention_block(const Tensor<T>& q, const Tensor<T>& k, T scale, std::size_t r0,
                                           std::size_t rb) {
  typename Tensor<T>::Matrix p = (q.map().middleRows(r0, rb) * k.map().transpose()) * scale;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    auto row = p.row(r).array();
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return p;
}

}  // namespace detail

/// softmax(q k^T * scale) v, computed `block` query rows at a time. Only the
/// inputs are kept; backward recomputes each block of weights, so memory stays
/// O(block x keys) instead of O(queries x keys).
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, T scale, std::size_t block = 256) {
  Tape<T>& tape = detail::same_tape(q, k, "attention");
  detail::same_tape(k, v, "attention");
  const Tensor<T>& Q = q.value();
  const Tensor<T>& K = k.value();
  const Tensor<T>& V = v.value();
  if (Q.cols() != K.cols()) detail::shape_mismatch("attention", Q, K);
  if (K.rows() != V.rows()) detail::shape_mismatch("attention", K, V);
  if (block == 0) throw std::invalid_argument("attention: block must be positive");
  const std::size_t m = Q.rows();
  Tensor<T> out = Tensor<T>::matrix(m, V.cols());
  for (std::size_t r0 = 0; r0 < m; r0 += block) {
    const std::size_t rb = std::min(block, m - r0);
    out.map().middleRows(r0, rb).noalias() = detail::attention_block(Q, K, scale, r0, rb) * V.map();
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return tape.record(std::move(out), q.requires_grad() || k.requires_grad() || v.requires_grad(),
                     [iq, ik, iv, scale, block](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(self);
                       const Tensor<T>& Qv = t.value(iq);
                       const Tensor<T>& Kv = t.value(ik);
                       const Tensor<T>& Vv = t.value(iv);
                       Tensor<T>* gq = t.accumulate(iq);
                       Tensor<T>* gk = t.accumulate(ik);
                       Tensor<T>* gv = t.accumulate(iv);
                       const std::size_t rows = Qv.rows();
                       for (std::size_t r0 = 0; r0 < rows; r0 += block) {
                         const std::size_t rb = std::min(block, rows - r0);
                         const auto p = detail::attention_block(Qv, Kv, scale, r0, rb);
                         const auto gb = g.map().middleRows(r0, rb);
                         if (gv) gv->map().noalias() += p.transpose() * gb;
                         if (!gq && !gk) continue;
                         typename Tensor<T>::Matrix dp = gb * Vv.map().transpose();
                         const auto dot = (dp.array() * p.array()).rowwise().sum().eval();
                         typename Tensor<T>::Matrix ds = (p.array() * (dp.array().colwise() - dot)).matrix() * scale;
                         if (gq) gq->map().middleRows(r0, rb).noalias() += ds * Kv.map();
                         if (gk) gk->map().noalias() += ds.transpose() * Qv.map().middleRows(r0, rb);
                       }
                     });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  Tensor<T> out = detail::like(x);
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t r = 0; r < m; ++r) {
    const T* xr = &x.data[r * n];
    const T mx = *std::max_element(xr, xr + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) total += std::exp(xr[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] = xr[c] - lse;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, m, n](Tape<T>& t, std::size_t self) {
    Tensor<T>* ga = t.accumulate(ia);
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    for (std::size_t r = 0; r < m; ++r) {
      T total = 0;
      for (std::size_t c = 0; c < n; ++c) total += g.data[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        ga->data[r * n + c] += g.data[r * n + c] - std::exp(y.data[r * n + c]) * total;
      }
    }
  });
}

/// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
template <typename T>
Var<T> layer_norm_rows(const Var<T>& a, T eps = T(1e-5)) {
  const Tensor<T>& x = a.value();
  Tensor<T> out = detail::like(x);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> rstd(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* xr = &x.data[r * n];
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= T(n);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] = (xr[c] - mean) * rstd[r];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, m, n, rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
                           Tensor<T>* ga = t.accumulate(ia);
                           const Tensor<T>& g = t.grad(self);
                           const Tensor<T>& y = t.value(self);
                           for (std::size_t r = 0; r < m; ++r) {
                             T mean_g = 0, mean_gy = 0;
                             for (std::size_t c = 0; c < n; ++c) {
                               mean_g += g.data[r * n + c];
                               mean_gy += g.data[r * n + c] * y.data[r * n + c];
                             }
                             mean_g /= T(n);
                             mean_gy /= T(n);
                             for (std::size_t c = 0; c < n; ++c) {
                               ga->data[r * n + c] +=
                                   rstd[r] * (g.data[r * n + c] - mean_g - y.data[r * n + c] * mean_gy);
                             }
                           }
                         });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  Tensor<T> out = Tensor<T>::matrix(x.cols(), x.rows());
  out.map() = x.map().transpose();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape<T>& t, std::size_t self) {
    t.accumulate(ia)->map() += t.grad(self).map().transpose();
  });
}

/// Columns [begin, end).
template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  const Tensor<T>& x = a.value();
  if (begin >= end || end > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + to_string(x.shape));
  }
  const std::size_t w = end - begin;
  Tensor<T> out = Tensor<T>::matrix(x.rows(), w);
  out.map() = x.map().middleCols(begin, w);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, begin, w](Tape<T>& t, std::size_t self) {
    t.accumulate(ia)->map().middleCols(begin, w) += t.grad(self).map();
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape<T>& tape = parts[0].tape();
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw std::logic_error("concat_cols: operands on different tapes");
    if (p.rows() != m) detail::shape_mismatch("concat_cols", parts[0].value(), p.value());
    total += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::matrix(m, total);
  std::vector<std::pair<std::size_t, std::size_t>> layout;  // (node id, width)
  std::size_t offset = 0;
  for (const auto& p : parts) {
    out.map().middleCols(offset, p.cols()) = p.value().map();
    layout.emplace_back(p.id(), p.cols());
    offset += p.cols();
  }
  return tape.record(std::move(out), needs_grad, [layout = std::move(layout)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    std::size_t off = 0;
    for (const auto& [id, w] : layout) {
      if (Tensor<T>* gp = t.accumulate(id)) gp->map() += g.map().middleCols(off, w);
      off += w;
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape<T>& tape = parts[0].tape();
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw std::logic_error("concat_rows: operands on different tapes");
    if (p.cols() != n) detail::shape_mismatch("concat_rows", parts[0].value(), p.value());
    total += p.rows();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::matrix(total, n);
  std::vector<std::pair<std::size_t, std::size_t>> layout;  // (node id, height)
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + offset * n);
    layout.emplace_back(p.id(), p.rows());
    offset += p.rows();
  }
  return tape.record(std::move(out), needs_grad, [layout = std::move(layout)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    std::size_t off = 0;
    for (const auto& [id, h] : layout) {
      if (Tensor<T>* gp = t.accumulate(id)) gp->map() += g.map().middleRows(off, h);
      off += h;
    }
  });
}

/// out[i] = a[index[i]]; repeated indices accumulate on the way back.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<std::size_t> index) {
  const Tensor<T>& x = a.value();
  const std::size_t n = x.cols();
  Tensor<T> out = Tensor<T>::matrix(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                       to_string(x.shape));
    }
    std::copy_n(&x.data[index[i] * n], n, &out.data[i * n]);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, n, index = std::move(index)](Tape<T>& t, std::size_t self) {
                           Tensor<T>* ga = t.accumulate(ia);
                           const Tensor<T>& g = t.grad(self);
                           for (std::size_t i = 0; i < index.size(); ++i) {
                             T* dst = &ga->data[index[i] * n];
                             const T* src = &g.data[i * n];
                             for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
                           }
                         });
}

/// out[segment[e]] += a[e], producing `segments` rows.
template <typename T>
Var<T> scatter_add_rows(const Var<T>& a, std::vector<std::size_t> segment, std::size_t segments) {
  const Tensor<T>& x = a.value();
  if (segment.size() != x.rows()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(segment.size()) + " segment ids for " +
                     to_string(x.shape));
  }
  const std::size_t n = x.cols();
  Tensor<T> out = Tensor<T>::matrix(segments, n);
  for (std::size_t e = 0; e < segment.size(); ++e) {
    if (segment[e] >= segments) throw ShapeError("scatter_add_rows: segment id out of range");
    T* dst = &out.data[segment[e] * n];
    const T* src = &x.data[e * n];
    for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, n, segment = std::move(segment)](Tape<T>& t, std::size_t self) {
                           Tensor<T>* ga = t.accumulate(ia);
                           const Tensor<T>& g = t.grad(self);
                           for (std::size_t e = 0; e < segment.size(); ++e) {
                             T* dst = &ga->data[e * n];
                             const T* src = &g.data[segment[e] * n];
                             for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
                           }
                         });
}

/// Softmax of a column of scores [E x 1] within groups sharing a segment id.
/// Every segment in [0, segments) must be non-empty.
template <typename T>
Var<T> segment_softmax(const Var<T>& a, std::vector<std::size_t> segment, std::size_t segments) {
  const Tensor<T>& x = a.value();
  if (x.cols() != 1 || segment.size() != x.rows()) {
    throw ShapeError("segment_softmax: expected [" + std::to_string(segment.size()) + "x1], got " +
                     to_string(x.shape));
  }
  std::vector<T> mx(segments, -std::numeric_limits<T>::infinity());
  std::vector<T> total(segments, T{0});
  for (std::size_t e = 0; e < segment.size(); ++e) {
    if (segment[e] >= segments) throw ShapeError("segment_softmax: segment id out of range");
    mx[segment[e]] = std::max(mx[segment[e]], x[e]);
  }
  for (std::size_t s = 0; s < segments; ++s) {
    if (!std::isfinite(mx[s])) throw ShapeError("segment_softmax: segment " + std::to_string(s) + " is empty");
  }
  Tensor<T> out = detail::like(x);
  for (std::size_t e = 0; e < segment.size(); ++e) total[segment[e]] += (out[e] = std::exp(x[e] - mx[segment[e]]));
  for (std::size_t e = 0; e < segment.size(); ++e) out[e] /= total[segment[e]];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, segments, segment = std::move(segment)](Tape<T>& t, std::size_t self) {
                           Tensor<T>* ga = t.accumulate(ia);
                           const Tensor<T>& g = t.grad(self);
                           const Tensor<T>& y = t.value(self);
                           std::vector<T> dot(segments, T{0});
                           for (std::size_t e = 0; e < segment.size(); ++e) dot[segment[e]] += g[e] * y[e];
                           for (std::size_t e = 0; e < segment.size(); ++e) {
                             (*ga)[e] += y[e] * (g[e] - dot[segment[e]]);
                           }
                         });
}

/// Column means: [m x n] -> [1 x n].
template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  const std::size_t m = x.rows();
  Tensor<T> out = Tensor<T>::matrix(1, x.cols());
  out.map() = x.map().colwise().sum() / T(m);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, m](Tape<T>& t, std::size_t self) {
    Tensor<T>* ga = t.accumulate(ia);
    ga->map().rowwise() += t.grad(self).map().row(0) / T(m);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::matrix(1, 1);
  out[0] = a.value().map().sum();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape<T>& t, std::size_t self) {
    t.accumulate(ia)->map().array() += t.grad(self)[0];
  });
}

/// Mean softmax cross-entropy over rows of logits [m x k] against class ids.
/// Evaluated as logsumexp(z) - z_target.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::vector<std::size_t> targets) {
  const Tensor<T>& z = logits.value();
  const std::size_t m = z.rows(), k = z.cols();
  if (targets.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + to_string(z.shape));
  }
  Tensor<T> probs = detail::like(z);
  T loss = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= k) throw ShapeError("cross_entropy: target class out of range");
    const T* zr = &z.data[r * k];
    const T mx = *std::max_element(zr, zr + k);
    T total = 0;
    for (std::size_t c = 0; c < k; ++c) total += (probs.data[r * k + c] = std::exp(zr[c] - mx));
    for (std::size_t c = 0; c < k; ++c) probs.data[r * k + c] /= total;
    loss += mx + std::log(total) - zr[targets[r]];
  }
  Tensor<T> out = Tensor<T>::matrix(1, 1);
  out[0] = loss / T(m);
  const std::size_t ia = logits.id();
  return logits.tape().record(
      std::move(out), logits.requires_grad(),
      [ia, m, k, probs = std::move(probs), targets = std::move(targets)](Tape<T>& t, std::size_t self) {
        Tensor<T>* ga = t.accumulate(ia);
        const T g = t.grad(self)[0] / T(m);
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < k; ++c) {
            ga->data[r * k + c] += g * (probs.data[r * k + c] - (c == targets[r] ? T{1} : T{0}));
          }
        }
      });
}

// Span-free convenience overloads.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  return concat_cols(std::span<const Var<T>>(parts));
}
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  return concat_rows(std::span<const Var<T>>(parts));
}

}  // namespace wsical::ad

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "npi/tensor.hpp"

// Differentiable array operations. Every op validates shapes, computes the
// forward value, rejects non-finite results and records its backward closure
// when any operand requires a gradient. No op broadcasts implicitly.

namespace npi {

namespace detail {

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
struct GradSink {
  std::shared_ptr<TensorNode<T>> node;
  explicit GradSink(const Tensor<T>& t) : node(t.ptr()) {}
  bool active() const { return node->requires_grad; }
  T* grad() {
    node->ensure_grad();
    return node->grad.data();
  }
  const T* data() const { return node->data.data(); }
};

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMajor<T>>;
template <class T>
using MutMap = Eigen::Map<RowMajor<T>>;

// c[r×n] += a[r×k] · b[k×n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n) {
  MutMap<T>(c, r, n).noalias() += ConstMap<T>(a, r, k) * ConstMap<T>(b, k, n);
}

// c[r×k] += g[r×n] · b[k×n]ᵀ
template <class T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t r, std::size_t n, std::size_t k) {
  MutMap<T>(c, r, k).noalias() += ConstMap<T>(g, r, n) * ConstMap<T>(b, k, n).transpose();
}

// c[k×n] += a[r×k]ᵀ · g[r×n]
template <class T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t r, std::size_t k, std::size_t n) {
  MutMap<T>(c, k, n).noalias() += ConstMap<T>(a, r, k).transpose() * ConstMap<T>(g, r, n);
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t r = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  }
  std::vector<T> out(r * n, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), r, k, n);
  detail::GradSink<T> sa(a), sb(b);
  return detail::finish<T>({r, n}, std::move(out), "matmul", {&a, &b},
                           [sa, sb, r, k, n](TensorNode<T>& o) mutable {
                             if (sa.active()) detail::gemm_nt(o.grad.data(), sb.data(), sa.grad(), r, n, k);
                             if (sb.active()) detail::gemm_tn(sa.data(), o.grad.data(), sb.grad(), r, k, n);
                           });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  detail::GradSink<T> sa(a);
  return detail::finish<T>({c, r}, std::move(out), "transpose", {&a}, [sa, r, c](TensorNode<T>& o) mutable {
    T* g = sa.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

enum class ElementwiseKind { add, sub, mul };

template <class T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseKind kind) {
  detail::require_same_shape(a, b, "elementwise");
  const std::size_t n = a.size();
  std::vector<T> out(n);
  auto x = a.data();
  auto y = b.data();
  switch (kind) {
    case ElementwiseKind::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
      break;
    case ElementwiseKind::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
      break;
    case ElementwiseKind::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
      break;
  }
  detail::GradSink<T> sa(a), sb(b);
  return detail::finish<T>(a.shape(), std::move(out), "elementwise", {&a, &b},
                           [sa, sb, n, kind](TensorNode<T>& o) mutable {
                             const T* g = o.grad.data();
                             if (sa.active()) {
                               T* ga = sa.grad();
                               if (kind == ElementwiseKind::mul) {
                                 for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * sb.data()[i];
                               } else {
                                 for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                               }
                             }
                             if (sb.active()) {
                               T* gb = sb.grad();
                               if (kind == ElementwiseKind::mul) {
                                 for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * sa.data()[i];
                               } else if (kind == ElementwiseKind::sub) {
                                 for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
                               } else {
                                 for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                               }
                             }
                           });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::add); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::sub); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::mul); }

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  detail::GradSink<T> sa(a);
  const std::size_t n = a.size();
  return detail::finish<T>(a.shape(), std::move(out), "scale", {&a}, [sa, n, factor](TensorNode<T>& o) mutable {
    T* g = sa.grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += factor * o.grad[i];
  });
}

// x[r×c] + bias (c values) added to every row.
template <class T>
Tensor<T> add_row_vector(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_matrix(x, "add_row_vector");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (bias.size() != c) {
    throw DimensionError("add_row_vector: bias " + shape_str(bias.shape()) + " for rows of width " + std::to_string(c));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  detail::GradSink<T> sx(x), sb(bias);
  return detail::finish<T>(x.shape(), std::move(out), "add_row_vector", {&x, &bias},
                           [sx, sb, r, c](TensorNode<T>& o) mutable {
                             if (sx.active()) {
                               T* g = sx.grad();
                               for (std::size_t i = 0; i < r * c; ++i) g[i] += o.grad[i];
                             }
                             if (sb.active()) {
                               T* g = sb.grad();
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) g[j] += o.grad[i * c + j];
                             }
                           });
}

enum class ActivationKind { gelu, relu, sigmoid, tanh };

template <class T>
Tensor<T> activation(const Tensor<T>& x, ActivationKind kind) {
  const std::size_t n = x.size();
  std::vector<T> out(n);
  auto v = x.data();
  constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = T(0.044715);
  for (std::size_t i = 0; i < n; ++i) {
    const T a = v[i];
    switch (kind) {
      case ActivationKind::gelu:
        out[i] = T(0.5) * a * (T(1) + std::tanh(k0 * (a + k1 * a * a * a)));
        break;
      case ActivationKind::relu:
        out[i] = a > T(0) ? a : T(0);
        break;
      case ActivationKind::sigmoid:
        out[i] = T(1) / (T(1) + std::exp(-a));
        break;
      case ActivationKind::tanh:
        out[i] = std::tanh(a);
        break;
    }
  }
  detail::GradSink<T> sx(x);
  std::vector<T> y = out;
  return detail::finish<T>(x.shape(), std::move(out), "activation", {&x},
                           [sx, y = std::move(y), n, kind](TensorNode<T>& o) mutable {
                             T* g = sx.grad();
                             const T* in = sx.data();
                             for (std::size_t i = 0; i < n; ++i) {
                               T d = T(0);
                               const T a = in[i];
                               switch (kind) {
                                 case ActivationKind::gelu: {
                                   const T u = k0 * (a + k1 * a * a * a);
                                   const T t = std::tanh(u);
                                   const T du = k0 * (T(1) + T(3) * k1 * a * a);
                                   d = T(0.5) * (T(1) + t) + T(0.5) * a * (T(1) - t * t) * du;
                                   break;
                                 }
                                 case ActivationKind::relu:
                                   d = a > T(0) ? T(1) : T(0);
                                   break;
                                 case ActivationKind::sigmoid:
                                   d = y[i] * (T(1) - y[i]);
                                   break;
                                 case ActivationKind::tanh:
                                   d = T(1) - y[i] * y[i];
                                   break;
                               }
                               g[i] += d * o.grad[i];
                             }
                           });
}

template <class T> Tensor<T> gelu(const Tensor<T>& x) { return activation(x, ActivationKind::gelu); }
template <class T> Tensor<T> relu(const Tensor<T>& x) { return activation(x, ActivationKind::relu); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, ActivationKind::sigmoid); }
template <class T> Tensor<T> tanh(const Tensor<T>& x) { return activation(x, ActivationKind::tanh); }

// Per-row normalization over the last dimension, then gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (gain.size() != c || bias.size() != c) throw DimensionError("layer_norm: gain/bias width mismatch");
  std::vector<T> out(r * c), xhat(r * c), inv_std(r);
  auto v = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (std::size_t i = 0; i < r; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < c; ++j) mean += v[i * c + j];
    mean /= T(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      const T d = v[i * c + j] - mean;
      var += d * d;
    }
    var /= T(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (v[i * c + j] - mean) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  detail::GradSink<T> sx(x), sg(gain), sb(bias);
  return detail::finish<T>(x.shape(), std::move(out), "layer_norm", {&x, &gain, &bias},
                           [sx, sg, sb, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                               TensorNode<T>& o) mutable {
                             const T* go = o.grad.data();
                             if (sg.active()) {
                               T* g = sg.grad();
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) g[j] += go[i * c + j] * xhat[i * c + j];
                             }
                             if (sb.active()) {
                               T* g = sb.grad();
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) g[j] += go[i * c + j];
                             }
                             if (sx.active()) {
                               T* g = sx.grad();
                               const T* gv = sg.data();
                               for (std::size_t i = 0; i < r; ++i) {
                                 T sum_dy = T(0), sum_dy_xhat = T(0);
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const T dy = go[i * c + j] * gv[j];
                                   sum_dy += dy;
                                   sum_dy_xhat += dy * xhat[i * c + j];
                                 }
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const T dy = go[i * c + j] * gv[j];
                                   g[i * c + j] += inv_std[i] / T(c) *
                                                   (T(c) * dy - sum_dy - xhat[i * c + j] * sum_dy_xhat);
                                 }
                               }
                             }
                           });
}

namespace detail {

template <class T>
Tensor<T> softmax_rows_impl(const Tensor<T>& x, bool causal, const char* op) {
  require_matrix(x, op);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c, T(0));
  auto v = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t limit = causal ? std::min(c, i + 1) : c;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, v[i * c + j]);
    T sum = T(0);
    for (std::size_t j = 0; j < limit; ++j) {
      out[i * c + j] = std::exp(v[i * c + j] - mx);
      sum += out[i * c + j];
    }
    for (std::size_t j = 0; j < limit; ++j) out[i * c + j] /= sum;
  }
  GradSink<T> sx(x);
  std::vector<T> y = out;
  return finish<T>(x.shape(), std::move(out), op, {&x}, [sx, y = std::move(y), r, c](TensorNode<T>& o) mutable {
    T* g = sx.grad();
    for (std::size_t i = 0; i < r; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += o.grad[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (o.grad[i * c + j] - dot);
    }
  });
}

}  // namespace detail

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  return detail::softmax_rows_impl(x, false, "softmax_rows");
}

// Row i only attends to columns 0..i; masked entries are exactly zero.
template <class T>
Tensor<T> causal_softmax_rows(const Tensor<T>& x) {
  return detail::softmax_rows_impl(x, true, "causal_softmax_rows");
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_matrix(x, "slice_rows");
  const std::size_t c = x.dim(1);
  if (start + count > x.dim(0)) throw DimensionError("slice_rows: range exceeds " + shape_str(x.shape()));
  auto v = x.data();
  std::vector<T> out(v.begin() + start * c, v.begin() + (start + count) * c);
  detail::GradSink<T> sx(x);
  return detail::finish<T>({count, c}, std::move(out), "slice_rows", {&x},
                           [sx, start, count, c](TensorNode<T>& o) mutable {
                             T* g = sx.grad() + start * c;
                             for (std::size_t i = 0; i < count * c; ++i) g[i] += o.grad[i];
                           });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (start + count > c) throw DimensionError("slice_cols: range exceeds " + shape_str(x.shape()));
  auto v = x.data();
  std::vector<T> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = v[i * c + start + j];
  detail::GradSink<T> sx(x);
  return detail::finish<T>({r, count}, std::move(out), "slice_cols", {&x},
                           [sx, start, count, r, c](TensorNode<T>& o) mutable {
                             T* g = sx.grad();
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += o.grad[i * count + j];
                           });
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.dim(0) != r) throw DimensionError("concat_cols: row counts differ");
    total += p.dim(1);
  }
  std::vector<T> out(r * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + offset + j] = p.data()[i * c + j];
    offset += c;
  }
  Tensor<T> result(Shape{r, total}, std::move(out));
  detail::check_finite(result, "concat_cols");
  bool grad = false;
  if (Tape<T>::current().enabled())
    for (const auto& p : parts) grad = grad || p.requires_grad();
  if (grad) {
    result.node().requires_grad = true;
    result.node().on_tape = true;
    std::vector<detail::GradSink<T>> sinks;
    for (const auto& p : parts) sinks.emplace_back(p);
    auto out_node = result.ptr();
    Tape<T>::current().record([out_node, sinks = std::move(sinks), r, total]() mutable {
      if (out_node->grad.empty()) return;
      std::size_t off = 0;
      for (auto& s : sinks) {
        const std::size_t c = s.node->shape[1];
        if (s.active()) {
          T* g = s.grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += out_node->grad[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return result;
}

// Flattens every part in order into one [1 × N] row.
template <class T>
Tensor<T> concat_flat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_flat: no inputs");
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<T> out;
  out.reserve(total);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor<T> result(Shape{1, total}, std::move(out));
  detail::check_finite(result, "concat_flat");
  bool grad = false;
  if (Tape<T>::current().enabled())
    for (const auto& p : parts) grad = grad || p.requires_grad();
  if (grad) {
    result.node().requires_grad = true;
    result.node().on_tape = true;
    std::vector<detail::GradSink<T>> sinks;
    for (const auto& p : parts) sinks.emplace_back(p);
    auto out_node = result.ptr();
    Tape<T>::current().record([out_node, sinks = std::move(sinks)]() mutable {
      if (out_node->grad.empty()) return;
      std::size_t off = 0;
      for (auto& s : sinks) {
        const std::size_t n = s.node->data.size();
        if (s.active()) {
          T* g = s.grad();
          for (std::size_t i = 0; i < n; ++i) g[i] += out_node->grad[off + i];
        }
        off += n;
      }
    });
  }
  return result;
}

// Contiguous run of `shape_size(shape)` values starting at `offset`, viewed
// with the given shape.
template <class T>
Tensor<T> slice_flat(const Tensor<T>& x, std::size_t offset, Shape shape) {
  const std::size_t n = shape_size(shape);
  if (offset + n > x.size()) throw DimensionError("slice_flat: range exceeds " + shape_str(x.shape()));
  std::vector<T> out(x.data().begin() + offset, x.data().begin() + offset + n);
  detail::GradSink<T> sx(x);
  return detail::finish<T>(std::move(shape), std::move(out), "slice_flat", {&x},
                           [sx, offset, n](TensorNode<T>& o) mutable {
                             T* g = sx.grad() + offset;
                             for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
                           });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return slice_flat(x, 0, std::move(shape));
}

// Zero-pads (or truncates) a matrix to exactly `rows` rows.
template <class T>
Tensor<T> pad_rows(const Tensor<T>& x, std::size_t rows) {
  detail::require_matrix(x, "pad_rows");
  const std::size_t r = x.dim(0), c = x.dim(1), keep = std::min(r, rows);
  std::vector<T> out(rows * c, T(0));
  std::copy(x.data().begin(), x.data().begin() + keep * c, out.begin());
  detail::GradSink<T> sx(x);
  return detail::finish<T>({rows, c}, std::move(out), "pad_rows", {&x}, [sx, keep, c](TensorNode<T>& o) mutable {
    T* g = sx.grad();
    for (std::size_t i = 0; i < keep * c; ++i) g[i] += o.grad[i];
  });
}

// Row lookup: out[i] = table[ids[i]].
template <class T, class Id>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const Id> ids) {
  detail::require_matrix(table, "gather_rows");
  const std::size_t c = table.dim(1), n_rows = table.dim(0);
  std::vector<T> out(ids.size() * c);
  std::vector<std::size_t> idx(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    idx[i] = static_cast<std::size_t>(ids[i]);
    if (idx[i] >= n_rows) throw DimensionError("gather_rows: id " + std::to_string(idx[i]) + " out of range");
    std::copy_n(table.data().begin() + idx[i] * c, c, out.begin() + i * c);
  }
  detail::GradSink<T> st(table);
  return detail::finish<T>({ids.size(), c}, std::move(out), "gather_rows", {&table},
                           [st, idx = std::move(idx), c](TensorNode<T>& o) mutable {
                             T* g = st.grad();
                             for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += o.grad[i * c + j];
                           });
}

// out[i] = x[i] * gains[i / segment]: one learnable gain per contiguous segment.
template <class T>
Tensor<T> segment_scale(const Tensor<T>& x, const Tensor<T>& gains, std::size_t segment) {
  if (segment == 0 || gains.size() * segment != x.size()) {
    throw DimensionError("segment_scale: " + std::to_string(gains.size()) + " gains of width " +
                         std::to_string(segment) + " for " + std::to_string(x.size()) + " values");
  }
  const std::size_t n = x.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * gains[i / segment];
  detail::GradSink<T> sx(x), sg(gains);
  return detail::finish<T>(x.shape(), std::move(out), "segment_scale", {&x, &gains},
                           [sx, sg, n, segment](TensorNode<T>& o) mutable {
                             if (sx.active()) {
                               T* g = sx.grad();
                               for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * sg.data()[i / segment];
                             }
                             if (sg.active()) {
                               T* g = sg.grad();
                               for (std::size_t i = 0; i < n; ++i) g[i / segment] += o.grad[i] * sx.data()[i];
                             }
                           });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  detail::GradSink<T> sx(x);
  const std::size_t n = x.size();
  return detail::finish<T>({1}, {s}, "sum", {&x}, [sx, n](TensorNode<T>& o) mutable {
    T* g = sx.grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

// Σ wᵢ·xᵢ over scalar tensors.
template <class T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size() || terms.empty()) throw DimensionError("weighted_sum: term/weight count mismatch");
  std::vector<Tensor<T>> scaled;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) throw DimensionError("weighted_sum: terms must be scalars");
    scaled.push_back(scale(terms[i], weights[i]));
  }
  return sum(concat_flat(scaled));
}

}  // namespace npi

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "npi/ops.hpp"

namespace npi {

enum class LossKind { bce, mse, cross_entropy };

inline constexpr double kBceClamp = 1e-7;
// Slack allowed on probabilities that leave [0,1] by round-off.
inline constexpr double kProbabilityTolerance = 1e-6;

// Mean binary cross-entropy. `target` is a constant; predictions are clamped
// to [1e-7, 1 - 1e-7].
template <class T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "bce");
  const std::size_t n = pred.size();
  const T lo = T(kBceClamp), hi = T(1) - T(kBceClamp);
  std::vector<T> clamped(n);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T p = pred[i], t = target[i];
    if (p < -T(kProbabilityTolerance) || p > T(1) + T(kProbabilityTolerance) || !std::isfinite(p)) {
      throw DomainError("bce: prediction " + std::to_string(p) + " outside [0,1]");
    }
    if (t < T(0) || t > T(1)) throw DomainError("bce: target " + std::to_string(t) + " outside [0,1]");
    clamped[i] = std::clamp(p, lo, hi);
    total -= t * std::log(clamped[i]) + (T(1) - t) * std::log(T(1) - clamped[i]);
  }
  detail::GradSink<T> sp(pred);
  std::vector<T> tv(target.data().begin(), target.data().end());
  return detail::finish<T>({1}, {total / T(n)}, "bce", {&pred},
                           [sp, clamped = std::move(clamped), tv = std::move(tv), n](TensorNode<T>& o) mutable {
                             T* g = sp.grad();
                             for (std::size_t i = 0; i < n; ++i) {
                               const T p = clamped[i];
                               g[i] += o.grad[0] * (-(tv[i] / p) + (T(1) - tv[i]) / (T(1) - p)) / T(n);
                             }
                           });
}

template <class T>
Tensor<T> bce(const Tensor<T>& pred, T target) {
  return bce(pred, Tensor<T>::full(pred.shape(), target));
}

// Mean squared error; gradient flows to `pred` only.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "mse");
  const std::size_t n = pred.size();
  T total = T(0);
  std::vector<T> diff(n);
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = pred[i] - target[i];
    total += diff[i] * diff[i];
  }
  detail::GradSink<T> sp(pred);
  return detail::finish<T>({1}, {total / T(n)}, "mse", {&pred},
                           [sp, diff = std::move(diff), n](TensorNode<T>& o) mutable {
                             T* g = sp.grad();
                             for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0] * T(2) * diff[i] / T(n);
                           });
}

// Mean over rows of -log softmax(logits)[row, target[row]].
template <class T, class Id>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const Id> targets) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t r = logits.dim(0), c = logits.dim(1);
  if (targets.size() != r) throw DimensionError("cross_entropy: one target per row required");
  std::vector<T> probs(r * c);
  std::vector<std::size_t> tgt(r);
  T total = T(0);
  auto v = logits.data();
  for (std::size_t i = 0; i < r; ++i) {
    tgt[i] = static_cast<std::size_t>(targets[i]);
    if (tgt[i] >= c) throw DomainError("cross_entropy: class id out of range");
    T mx = v[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, v[i * c + j]);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += std::exp(v[i * c + j] - mx);
    const T log_z = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(v[i * c + j] - log_z);
    total += log_z - v[i * c + tgt[i]];
  }
  detail::GradSink<T> sl(logits);
  return detail::finish<T>({1}, {total / T(r)}, "cross_entropy", {&logits},
                           [sl, probs = std::move(probs), tgt = std::move(tgt), r, c](TensorNode<T>& o) mutable {
                             T* g = sl.grad();
                             const T k = o.grad[0] / T(r);
                             for (std::size_t i = 0; i < r; ++i) {
                               for (std::size_t j = 0; j < c; ++j) g[i * c + j] += k * probs[i * c + j];
                               g[i * c + tgt[i]] -= k;
                             }
                           });
}

}  // namespace npi

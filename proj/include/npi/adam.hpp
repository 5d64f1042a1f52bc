#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "npi/tensor.hpp"

namespace npi {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// One bias-corrected Adam update over `params`, then zeroes their gradients.
// The parameter list must be passed in the same order on every call.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), T(0));
      state.second_moment.emplace_back(p.size(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    if (state.first_moment[i].size() != params[i].size()) {
      throw ContractError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].mutable_grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = T(c.beta1) * m[k] + T(1.0 - c.beta1) * g[k];
      v[k] = T(c.beta2) * v[k] + T(1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      w[k] -= T(c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
    params[i].zero_grad();
  }
}

template <class T>
double grad_norm(std::span<const Tensor<T>> params) {
  double s = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (T g : p.grad()) s += double(g) * double(g);
  return std::sqrt(s);
}

// Rescales gradients so their global L2 norm is at most `max_norm`. Returns the
// norm before clipping.
template <class T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  std::vector<Tensor<T>> view(params.begin(), params.end());
  const double norm = grad_norm<T>(view);
  if (max_norm > 0.0 && norm > max_norm) {
    const T k = T(max_norm / norm);
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.mutable_grad()) g *= k;
  }
  return norm;
}

template <class T>
void zero_grads(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace npi

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "npi/tensor.hpp"

namespace npi {

struct GradCheckResult {
  std::string name;
  double relative_error = 0.0;  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed() const { return relative_error <= tolerance; }
};

// Compares backward() gradients of a scalar function against central finite
// differences, perturbing every element of every input (or the first
// `max_elements` of each).
template <class T>
GradCheckResult gradcheck(const std::string& name, std::vector<Tensor<T>> inputs,
                          const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& fn,
                          double tolerance = 1e-3, double h = 1e-3, std::size_t max_elements = 0) {
  Tape<T>::current().clear();
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor<T> loss = fn(inputs);
  backward(loss);
  std::vector<std::vector<T>> analytic;
  for (auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  double diff2 = 0.0, an2 = 0.0, num2 = 0.0, max_abs = 0.0;
  std::size_t checked = 0;
  NoGradGuard<T> no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_data();
    const std::size_t limit = max_elements ? std::min(max_elements, values.size()) : values.size();
    for (std::size_t i = 0; i < limit; ++i) {
      const T saved = values[i];
      values[i] = saved + T(h);
      const double up = double(fn(inputs).item());
      values[i] = saved - T(h);
      const double down = double(fn(inputs).item());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = double(analytic[t][i]);
      diff2 += (a - numeric) * (a - numeric);
      an2 += a * a;
      num2 += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(a - numeric));
      ++checked;
    }
  }
  GradCheckResult r;
  r.name = name;
  const double denom = std::max({std::sqrt(an2), std::sqrt(num2), 1e-12});
  r.relative_error = std::sqrt(diff2) / denom;
  r.max_abs_error = max_abs;
  r.checked = checked;
  r.tolerance = tolerance;
  return r;
}

}  // namespace npi

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "npi/errors.hpp"

namespace npi {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until materialized
  bool requires_grad = false;
  bool on_tape = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

// Shared handle to a node. Copies alias the same storage; use clone() for a
// deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 2 ? dim(1) : size(); }

  std::span<const T> data() const { return node_->data; }
  // Direct write access. Only for initialization and optimizer updates.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  bool on_tape() const { return node_->on_tape; }

  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), node_->data, requires_grad);
  }
  // Value copy cut off from any graph.
  Tensor detach() const { return clone(false); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>(shape(), std::move(out), false);
  }

  TensorNode<T>& node() const { return *node_; }
  const std::shared_ptr<TensorNode<T>>& ptr() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Ordered record of differentiable ops executed on this thread. Recording order
// is a topological order, so replaying in reverse visits producers after all of
// their consumers.
template <class T>
class Tape {
 public:
  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

  void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }

  std::size_t size() const { return entries_.size(); }

  // Releases every intermediate kept alive by recorded closures.
  void clear() { entries_.clear(); }

  void replay() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> entries_;
  bool enabled_ = true;
};

template <class T>
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape<T>::current().enabled()) { Tape<T>::current().set_enabled(false); }
  ~NoGradGuard() { Tape<T>::current().set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <class T>
bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::current().enabled()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

// Builds the result tensor and, when any input requires a gradient, records
// `backward` on the current tape. `backward` receives the output node.
template <class T, class Backward>
Tensor<T> finish(Shape shape, std::vector<T> values, const char* op,
                 std::initializer_list<const Tensor<T>*> inputs, Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(values), false);
  check_finite(out, op);
  if (wants_grad<T>(inputs)) {
    out.node().requires_grad = true;
    out.node().on_tape = true;
    auto out_node = out.ptr();
    Tape<T>::current().record([out_node, fn = std::forward<Backward>(backward)]() mutable {
      if (out_node->grad.empty()) return;
      fn(*out_node);
    });
  }
  return out;
}

}  // namespace detail

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
// consumed; gradients accumulate into every reachable tensor with
// requires_grad set.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  if (!loss.on_tape()) {
    throw ContractError("backward() called on a loss that was not recorded on the tape");
  }
  auto& node = loss.node();
  node.ensure_grad();
  node.grad[0] += T(1);
  Tape<T>::current().replay();
  Tape<T>::current().clear();
}

}  // namespace npi

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "npi/checkpoint.hpp"
#include "npi/control.hpp"
#include "npi/ops.hpp"
#include "npi/rng.hpp"

namespace npi {

// Plain multi-layer perceptron with ReLU between layers and a linear output.
// Rows of the input are independent samples.
template <class T>
class FeedForward {
 public:
  FeedForward() = default;

  FeedForward(std::string prefix, std::vector<std::size_t> sizes, std::uint64_t seed, bool zero_final = false)
      : prefix_(std::move(prefix)), sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw ConfigError("a feed-forward network needs at least input and output sizes");
    for (auto s : sizes_)
      if (s == 0) throw ConfigError("layer sizes must be positive");
    Rng rng(derive_seed(seed, prefix_ + ".init"));
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      const bool last = l + 2 == sizes_.size();
      const double bound = 1.0 / std::sqrt(double(in));
      std::vector<T> w(in * out, T(0));
      if (!(last && zero_final))
        for (auto& x : w) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
      weights_.emplace_back(Shape{in, out}, std::move(w), true);
      biases_.push_back(Tensor<T>::zeros({out}, true));
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.cols() != sizes_.front()) {
      throw ConfigError(prefix_ + ": input of shape " + shape_str(x.shape()) + " does not match width " +
                        std::to_string(sizes_.front()));
    }
    Tensor<T> h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = add_row_vector(matmul(h, weights_[l]), biases_[l]);
      if (l + 1 < weights_.size()) h = relu(h);
    }
    return h;
  }

  const std::vector<std::size_t>& sizes() const { return sizes_; }

  FeedForward clone() const {
    FeedForward c = *this;
    for (auto& w : c.weights_) w = w.clone(w.requires_grad());
    for (auto& b : c.biases_) b = b.clone(b.requires_grad());
    return c;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> p;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      p.emplace_back(prefix_ + ".l" + std::to_string(l) + ".w", weights_[l]);
      p.emplace_back(prefix_ + ".l" + std::to_string(l) + ".b", biases_[l]);
    }
    return p;
  }

  // Σ (in·out + out) over layers.
  static std::size_t parameter_count(const std::vector<std::size_t>& sizes) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return n;
  }

 private:
  std::string prefix_;
  std::vector<std::size_t> sizes_;
  std::vector<Tensor<T>> weights_, biases_;
};

struct NetConfig {
  std::vector<std::size_t> hidden{512, 512};
  bool zero_final = false;  // forced on for the NPI
  double output_gain = 1.0; // NPI only: initial per-tap gain after tanh
};

enum class NetKind { npi, classifier, discriminator };

inline const char* net_prefix(NetKind k) {
  switch (k) {
    case NetKind::npi: return "npi";
    case NetKind::classifier: return "classifier";
    case NetKind::discriminator: return "discriminator";
  }
  return "net";
}

namespace detail {

template <class T>
class NetworkBase {
 public:
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    auto p = body_.named_parameters();
    for (auto& extra : extra_parameters()) p.push_back(extra);
    return p;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& t : parameters()) {
      t.set_requires_grad(on);
      if (!on) t.node().grad.clear();
    }
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

  std::size_t input_size() const { return body_.sizes().front(); }

 protected:
  virtual ~NetworkBase() = default;
  virtual std::vector<std::pair<std::string, Tensor<T>>> extra_parameters() const { return {}; }
  void check_input(const Tensor<T>& s, const char* what) const {
    if (s.rank() != 2 || s.cols() != input_size()) {
      throw ConfigError(std::string(what) + ": input of shape " + shape_str(s.shape()) + " does not match " +
                        std::to_string(input_size()) + " values");
    }
  }
  FeedForward<T> body_;
};

}  // namespace detail

// X: flattened activation sequence → perturbation sequence of the same size.
// D = gain[tap] · tanh(MLP(S)); the MLP's last layer starts at zero so a fresh
// network emits exactly zero.
template <class T>
class NPINetwork : public detail::NetworkBase<T> {
 public:
  NPINetwork() = default;

  NPINetwork(const ControlConfig& control, std::size_t d_model, const NetConfig& cfg, std::uint64_t seed)
      : control_(control), d_model_(d_model), hidden_(cfg.hidden) {
    const std::size_t n = control.flat_size(d_model);
    std::vector<std::size_t> sizes{n};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(n);
    this->body_ = FeedForward<T>(net_prefix(NetKind::npi), sizes, seed, true);
    gains_ = Tensor<T>::full({control.m(), 1}, static_cast<T>(cfg.output_gain), true);
    for (std::size_t x = 0; x < control.w; ++x)
      for (std::size_t j = 0; j < control.m(); ++j) segment_tap_.push_back(static_cast<std::uint32_t>(j));
  }

  Tensor<T> forward(const Tensor<T>& s) const {
    this->check_input(s, "npi");
    if (s.rows() != 1) throw ConfigError("npi: expects one flattened sequence per call");
    Tensor<T> raw = npi::tanh(this->body_.forward(s));
    Tensor<T> gains = gather_rows(gains_, std::span<const std::uint32_t>(segment_tap_));
    return segment_scale(raw, gains, control_.c_max * d_model_);
  }

  // Copies share weights; clone() gives an independent network.
  NPINetwork clone() const {
    NPINetwork c = *this;
    c.body_ = this->body_.clone();
    c.gains_ = gains_.clone(gains_.requires_grad());
    return c;
  }

  NPIFunction<T> as_function() const {
    return [net = *this](const Tensor<T>& s) { return net.forward(s); };
  }

  const ControlConfig& control() const { return control_; }
  std::size_t d_model() const { return d_model_; }
  const Tensor<T>& gains() const { return gains_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }

  // Closed-form size: MLP N→h₁→…→N plus m gains.
  static std::size_t expected_parameters(const ControlConfig& control, std::size_t d_model,
                                         const std::vector<std::size_t>& hidden) {
    const std::size_t n = control.flat_size(d_model);
    std::vector<std::size_t> sizes{n};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(n);
    return FeedForward<T>::parameter_count(sizes) + control.m();
  }

 protected:
  std::vector<std::pair<std::string, Tensor<T>>> extra_parameters() const override {
    return {{"npi.gains", gains_}};
  }

 private:
  ControlConfig control_;
  std::size_t d_model_ = 0;
  std::vector<std::size_t> hidden_;
  Tensor<T> gains_;
  std::vector<std::uint32_t> segment_tap_;
};

// Y and Z: flattened activation sequence(s) → probability per row.
template <class T>
class ProbabilityNetwork : public detail::NetworkBase<T> {
 public:
  ProbabilityNetwork() = default;

  ProbabilityNetwork(NetKind kind, std::size_t input, const NetConfig& cfg, std::uint64_t seed)
      : kind_(kind), hidden_(cfg.hidden) {
    if (kind == NetKind::npi) throw ConfigError("probability networks are classifier or discriminator");
    std::vector<std::size_t> sizes{input};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(1);
    this->body_ = FeedForward<T>(net_prefix(kind), sizes, seed, cfg.zero_final);
  }

  // [B × N] → [B × 1] probabilities.
  Tensor<T> forward(const Tensor<T>& s) const {
    this->check_input(s, net_prefix(kind_));
    return sigmoid(this->body_.forward(s));
  }

  double probability(const Tensor<T>& s) const {
    NoGradGuard<T> no_grad;
    return double(forward(s).item());
  }

  ProbabilityNetwork clone() const {
    ProbabilityNetwork c = *this;
    c.body_ = this->body_.clone();
    return c;
  }

  NetKind kind() const { return kind_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }

  static std::size_t expected_parameters(std::size_t input, const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> sizes{input};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    return FeedForward<T>::parameter_count(sizes);
  }

 private:
  NetKind kind_ = NetKind::classifier;
  std::vector<std::size_t> hidden_;
};

template <class T>
using ContentClassifier = ProbabilityNetwork<T>;
template <class T>
using Discriminator = ProbabilityNetwork<T>;

template <class T>
ProbabilityNetwork<T> make_classifier(std::size_t input, const NetConfig& cfg, std::uint64_t seed) {
  return ProbabilityNetwork<T>(NetKind::classifier, input, cfg, seed);
}

template <class T>
ProbabilityNetwork<T> make_discriminator(std::size_t input, const NetConfig& cfg, std::uint64_t seed) {
  return ProbabilityNetwork<T>(NetKind::discriminator, input, cfg, seed);
}

// Stacks flattened [1 × N] sequences into a detached [B × N] batch.
template <class T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t n = rows.front().size();
  std::vector<T> out;
  out.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("stack_rows: rows differ in size");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return Tensor<T>({rows.size(), n}, std::move(out));
}

// Checkpoint helpers. Architecture is stored alongside the weights so a
// network can be rebuilt from its file alone.
namespace detail {

inline Tensor<float> size_tensor(const std::vector<std::size_t>& v) {
  std::vector<float> f(v.begin(), v.end());
  if (f.empty()) f.push_back(0.0f);
  const Shape shape{f.size()};
  return Tensor<float>(shape, std::move(f));
}

inline std::vector<std::size_t> sizes_from(const Tensor<float>& t) {
  std::vector<std::size_t> v;
  for (float x : t.data()) v.push_back(static_cast<std::size_t>(x));
  if (v.size() == 1 && v[0] == 0) v.clear();
  return v;
}

template <class T>
NamedTensors to_float(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
  NamedTensors out;
  for (auto& [name, t] : params) out.emplace_back(name, t.template cast<float>());
  return out;
}

}  // namespace detail

template <class T>
NamedTensors checkpoint_tensors(const NPINetwork<T>& net) {
  const auto& c = net.control();
  NamedTensors out;
  out.emplace_back("npi.meta.hidden", detail::size_tensor(net.hidden()));
  std::vector<std::size_t> shape{c.w, c.c_max, net.d_model()};
  out.emplace_back("npi.meta.shape", detail::size_tensor(shape));
  out.emplace_back("npi.meta.taps", detail::size_tensor(c.taps));
  for (auto& p : detail::to_float(net.named_parameters())) out.push_back(std::move(p));
  return out;
}

template <class T>
NamedTensors checkpoint_tensors(const ProbabilityNetwork<T>& net) {
  const std::string prefix = net_prefix(net.kind());
  NamedTensors out;
  out.emplace_back(prefix + ".meta.hidden", detail::size_tensor(net.hidden()));
  out.emplace_back(prefix + ".meta.input", detail::size_tensor({net.input_size()}));
  for (auto& p : detail::to_float(net.named_parameters())) out.push_back(std::move(p));
  return out;
}

inline NPINetwork<float> npi_from_checkpoint(const NamedTensors& t) {
  if (!has_tensor(t, "npi.meta.shape")) throw FormatError("checkpoint does not contain an NPI network");
  const auto shape = detail::sizes_from(find_tensor(t, "npi.meta.shape"));
  if (shape.size() != 3) throw FormatError("malformed npi.meta.shape");
  ControlConfig c;
  c.w = shape[0];
  c.c_max = shape[1];
  c.taps = detail::sizes_from(find_tensor(t, "npi.meta.taps"));
  NetConfig nc;
  nc.hidden = detail::sizes_from(find_tensor(t, "npi.meta.hidden"));
  NPINetwork<float> net(c, shape[2], nc, 0);
  auto named = net.named_parameters();
  assign_parameters(named, t);
  return net;
}

inline ProbabilityNetwork<float> probability_from_checkpoint(const NamedTensors& t, NetKind kind) {
  const std::string prefix = net_prefix(kind);
  if (!has_tensor(t, prefix + ".meta.input")) throw FormatError("checkpoint does not contain a " + prefix + " network");
  NetConfig nc;
  nc.hidden = detail::sizes_from(find_tensor(t, prefix + ".meta.hidden"));
  const auto input = detail::sizes_from(find_tensor(t, prefix + ".meta.input")).at(0);
  ProbabilityNetwork<float> net(kind, input, nc, 0);
  auto named = net.named_parameters();
  assign_parameters(named, t);
  return net;
}

}  // namespace npi

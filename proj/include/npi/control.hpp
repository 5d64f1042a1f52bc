#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "npi/generate.hpp"
#include "npi/lm.hpp"
#include "npi/ops.hpp"

namespace npi {

struct ControlConfig {
  std::vector<std::size_t> taps{1, 2};  // I_in, 1-based block indices
  std::size_t w = 10;
  std::size_t c_max = 64;
  // When set, perturbed passes are fed the original window's tokens instead of
  // their own samples. Off: perturbed samples are fed back, as at inference.
  bool teacher_force = false;

  std::size_t m() const { return taps.size(); }

  void validate(std::size_t n_blocks) const {
    if (taps.empty()) throw ConfigError("at least one tap index is required");
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (taps[i] < 1 || taps[i] > n_blocks)
        throw ConfigError("tap index " + std::to_string(taps[i]) + " outside [1, " + std::to_string(n_blocks) + "]");
      if (i && taps[i] <= taps[i - 1]) throw ConfigError("tap indices must be strictly increasing");
    }
    if (w < 1) throw ConfigError("window w must be at least 1");
    if (w > c_max) throw ConfigError("window w exceeds c_max");
  }

  void validate(const LMConfig& lm) const {
    if (c_max != lm.c_max) throw ConfigError("control c_max differs from the model's c_max");
    validate(lm.n_blocks);
  }

  // Length of the flattened activation sequence fed to the NPI.
  std::size_t flat_size(std::size_t d_model) const { return w * m() * c_max * d_model; }
};

// m tapped states of one pass, each [c_max × d_model], zero-padded.
template <class T>
using ActivationBundle = std::vector<Tensor<T>>;

// w bundles; also the shape of a perturbation sequence D_out.
template <class T>
using ActivationSequence = std::vector<ActivationBundle<T>>;

template <class T>
ActivationBundle<T> extract_controls(const std::vector<Tensor<T>>& hidden, const ControlConfig& cfg) {
  ActivationBundle<T> bundle;
  bundle.reserve(cfg.m());
  for (std::size_t tap : cfg.taps) {
    if (tap < 1 || tap > hidden.size())
      throw ConfigError("tap index " + std::to_string(tap) + " outside [1, " + std::to_string(hidden.size()) + "]");
    const Tensor<T>& h = hidden[tap - 1];
    if (h.rows() > cfg.c_max) {
      bundle.push_back(slice_rows(h, h.rows() - cfg.c_max, cfg.c_max));
    } else {
      bundle.push_back(pad_rows(h, cfg.c_max));
    }
  }
  return bundle;
}

// Pass-major, then tap order.
template <class T>
Tensor<T> flatten_sequence(const ActivationSequence<T>& seq) {
  std::vector<Tensor<T>> parts;
  for (const auto& bundle : seq)
    for (const auto& t : bundle) parts.push_back(t);
  return concat_flat(parts);
}

template <class T>
ActivationSequence<T> unflatten_sequence(const Tensor<T>& flat, const ControlConfig& cfg, std::size_t d_model) {
  const std::size_t block = cfg.c_max * d_model;
  if (flat.size() != cfg.w * cfg.m() * block) {
    throw InjectionError("perturbation of " + std::to_string(flat.size()) + " values does not match w·m·c_max·d = " +
                         std::to_string(cfg.w * cfg.m() * block));
  }
  ActivationSequence<T> seq(cfg.w);
  for (std::size_t x = 0; x < cfg.w; ++x)
    for (std::size_t j = 0; j < cfg.m(); ++j)
      seq[x].push_back(slice_flat(flat, (x * cfg.m() + j) * block, {cfg.c_max, d_model}));
  return seq;
}

// Single controlled forward pass: after every tap block the matching entry of
// `perturbation` (restricted to the first len rows) is added to the block
// output. A null perturbation runs the unmodified model.
template <class T>
typename TransformerLM<T>::Output npic_forward(const TransformerLM<T>& lm, std::span<const TokenId> ids,
                                               const ActivationBundle<T>* perturbation, const ControlConfig& cfg) {
  if (!perturbation) return lm.forward(ids);
  const std::size_t d = lm.config().d_model;
  if (perturbation->size() != cfg.m()) {
    throw InjectionError("perturbation bundle has " + std::to_string(perturbation->size()) + " entries, expected " +
                         std::to_string(cfg.m()));
  }
  for (const auto& p : *perturbation) {
    if (p.shape() != Shape{cfg.c_max, d}) {
      throw InjectionError("perturbation shape " + shape_str(p.shape()) + " does not match tap shape " +
                           shape_str({cfg.c_max, d}));
    }
  }
  if (ids.size() > cfg.c_max) throw ContextError("sequence exceeds c_max");
  const std::size_t len = ids.size();
  auto inject = [&](std::size_t block, const Tensor<T>& h) -> Tensor<T> {
    auto it = std::find(cfg.taps.begin(), cfg.taps.end(), block);
    if (it == cfg.taps.end()) return h;
    const auto& p = (*perturbation)[std::size_t(it - cfg.taps.begin())];
    return add(h, slice_rows(p, 0, len));
  };
  return lm.forward(ids, inject);
}

// Maps a flattened activation sequence S ([1 × w·m·c_max·d]) to a flattened
// perturbation sequence of the same size.
template <class T>
using NPIFunction = std::function<Tensor<T>(const Tensor<T>&)>;

template <class T>
struct ControlledRun {
  Tokens original;                 // uncontrolled window
  Tokens tokens;                   // T^D_out
  ActivationSequence<T> S;         // uncontrolled taps
  ActivationSequence<T> S_prime;   // taps after injection
  Tensor<T> D;                     // flattened perturbation
  Tensor<T> S_flat() const { return flatten_sequence(S); }
  Tensor<T> S_prime_flat() const { return flatten_sequence(S_prime); }
};

// Runs w uncontrolled passes to collect S, computes D = npi(S) once, then
// reruns w passes from the same context with pass x receiving bundle x of D.
// Both rollouts use a fresh sampler built from `sampler`, so a zero
// perturbation reproduces the uncontrolled tokens exactly.
template <class T>
ControlledRun<T> controlled_generate(const TransformerLM<T>& lm, std::span<const TokenId> context,
                                     const NPIFunction<T>& npi, const ControlConfig& cfg,
                                     const SamplerConfig& sampler) {
  cfg.validate(lm.config());
  if (context.empty()) throw DataError("controlled generation needs a non-empty context");
  ControlledRun<T> run;
  {
    NoGradGuard<T> no_grad;
    Sampler s(sampler);
    Tokens seq(context.begin(), context.end());
    for (std::size_t x = 0; x < cfg.w; ++x) {
      auto out = lm.forward(context_window(seq, cfg.c_max));
      run.S.push_back(extract_controls(out.hidden, cfg));
      auto logits = last_row(out.logits);
      const TokenId next = s.sample(std::span<const T>(logits));
      run.original.push_back(next);
      seq.push_back(next);
    }
  }
  run.D = npi(flatten_sequence(run.S));
  auto D = unflatten_sequence(run.D, cfg, lm.config().d_model);
  Sampler s(sampler);
  Tokens seq(context.begin(), context.end());
  for (std::size_t x = 0; x < cfg.w; ++x) {
    auto out = npic_forward(lm, context_window(seq, cfg.c_max), &D[x], cfg);
    run.S_prime.push_back(extract_controls(out.hidden, cfg));
    auto logits = last_row(out.logits);
    const TokenId next = s.sample(std::span<const T>(logits));
    run.tokens.push_back(next);
    seq.push_back(cfg.teacher_force ? run.original[x] : next);
  }
  return run;
}

// Continuation of `steps` tokens produced window by window: each window of w
// tokens is one controlled_generate call, appended to the running context.
template <class T>
Tokens controlled_continue(const TransformerLM<T>& lm, std::span<const TokenId> context, const NPIFunction<T>& npi,
                           const ControlConfig& cfg, const SamplerConfig& sampler, std::size_t steps) {
  Tokens seq(context.begin(), context.end());
  Tokens out;
  std::size_t window = 0;
  while (out.size() < steps) {
    SamplerConfig sc = sampler;
    sc.seed = derive_seed(sampler.seed, "window." + std::to_string(window++));
    auto run = controlled_generate(lm, context_window(seq, lm.config().c_max), npi, cfg, sc);
    for (TokenId t : run.tokens) {
      if (out.size() == steps) break;
      out.push_back(t);
      seq.push_back(t);
    }
  }
  return out;
}

// An NPI that always outputs zeros.
template <class T>
NPIFunction<T> zero_npi() {
  return [](const Tensor<T>& s) { return Tensor<T>::zeros(s.shape()); };
}

}  // namespace npi

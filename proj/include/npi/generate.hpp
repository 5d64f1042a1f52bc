#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "npi/lm.hpp"
#include "npi/rng.hpp"

namespace npi {

struct SamplerConfig {
  std::size_t top_k = 1;
  std::optional<double> top_p{};
  std::uint64_t seed = 0;
};

// Argmax with ties broken toward the lowest token id.
template <class T>
TokenId argmax_token(std::span<const T> logits) {
  TokenId best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<TokenId>(i);
  return best;
}

class Sampler {
 public:
  explicit Sampler(SamplerConfig config) : config_(config), rng_(derive_seed(config.seed, "sampler")) {
    if (config_.top_k < 1) throw ConfigError("top_k must be >= 1");
    if (config_.top_p && (*config_.top_p <= 0.0 || *config_.top_p > 1.0)) throw ConfigError("top_p must be in (0,1]");
  }

  const SamplerConfig& config() const { return config_; }
  bool deterministic() const { return config_.top_k == 1; }

  template <class T>
  TokenId sample(std::span<const T> logits) {
    if (config_.top_k == 1) return argmax_token(logits);
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    order.resize(std::min(order.size(), config_.top_k));
    std::vector<double> probs(order.size());
    const double mx = logits[order.front()];
    double total = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) total += probs[i] = std::exp(double(logits[order[i]]) - mx);
    for (auto& p : probs) p /= total;
    if (config_.top_p) {
      double cum = 0.0;
      std::size_t keep = 0;
      while (keep < probs.size()) {
        cum += probs[keep++];
        if (cum >= *config_.top_p) break;
      }
      probs.resize(keep);
      order.resize(keep);
      total = std::accumulate(probs.begin(), probs.end(), 0.0);
      for (auto& p : probs) p /= total;
    }
    double u = uniform01(rng_);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (u < probs[i]) return static_cast<TokenId>(order[i]);
      u -= probs[i];
    }
    return static_cast<TokenId>(order.back());
  }

 private:
  SamplerConfig config_;
  Rng rng_;
};

// Last `c_max` tokens of a sequence.
inline std::span<const TokenId> context_window(std::span<const TokenId> tokens, std::size_t c_max) {
  return tokens.size() > c_max ? tokens.subspan(tokens.size() - c_max) : tokens;
}

template <class T>
struct Generation {
  Tokens tokens;                                // continuation only
  std::vector<std::vector<Tensor<T>>> hidden;   // per step: the n block outputs of the pass that produced it
};

// Autoregressive decoding. Context longer than c_max is truncated to its last
// c_max tokens before every pass.
template <class T>
Generation<T> generate(const TransformerLM<T>& lm, std::span<const TokenId> context, std::size_t steps,
                       Sampler& sampler, bool keep_hidden = true) {
  if (context.empty()) throw DataError("generate needs a non-empty context");
  NoGradGuard<T> no_grad;
  Generation<T> out;
  Tokens seq(context.begin(), context.end());
  for (std::size_t s = 0; s < steps; ++s) {
    auto res = lm.forward(context_window(seq, lm.config().c_max));
    auto logits = last_row(res.logits);
    const TokenId next = sampler.sample(std::span<const T>(logits));
    out.tokens.push_back(next);
    if (keep_hidden) out.hidden.push_back(std::move(res.hidden));
    seq.push_back(next);
  }
  return out;
}

template <class T>
Generation<T> generate(const TransformerLM<T>& lm, std::span<const TokenId> context, std::size_t steps,
                       const SamplerConfig& config, bool keep_hidden = true) {
  Sampler sampler(config);
  return generate(lm, context, steps, sampler, keep_hidden);
}

// Sum of next-token negative log-likelihoods for tokens[first_target..].
// Sequences that fit in one pass are scored in one pass; longer ones are
// scored in overlapping windows so every prediction sees at least c_max/2
// preceding tokens (or all of them, near the start).
template <class T>
double sum_nll(const TransformerLM<T>& lm, std::span<const TokenId> tokens, std::size_t first_target = 1) {
  NoGradGuard<T> no_grad;
  const std::size_t c_max = lm.config().c_max;
  const std::size_t half = std::max<std::size_t>(1, c_max / 2);
  const std::size_t n = tokens.size();
  double total = 0.0;
  std::size_t next = std::max<std::size_t>(first_target, 1);
  while (next < n) {
    std::size_t start = 0;
    if (n - 1 > c_max) start = next > half ? next - half : 0;
    const std::size_t end = std::min(n, start + c_max + 1);
    auto res = lm.forward(tokens.subspan(start, end - 1 - start));
    const std::size_t v = res.logits.cols();
    const auto lg = res.logits.data();
    for (std::size_t t = next; t < end; ++t) {
      const std::size_t row = t - 1 - start;
      double mx = lg[row * v];
      for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, double(lg[row * v + j]));
      double s = 0.0;
      for (std::size_t j = 0; j < v; ++j) s += std::exp(double(lg[row * v + j]) - mx);
      total += mx + std::log(s) - double(lg[row * v + tokens[t]]);
    }
    next = end;
  }
  return total;
}

// exp of the mean next-token negative log-likelihood over the text.
template <class T>
double perplexity(const TransformerLM<T>& lm, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw DataError("perplexity needs at least 2 tokens");
  return std::exp(sum_nll(lm, tokens, 1) / double(tokens.size() - 1));
}

template <class T>
double perplexity(const TransformerLM<T>& lm, const Vocabulary& vocab, std::string_view text) {
  auto ids = vocab.tokenize(text);
  return perplexity(lm, std::span<const TokenId>(ids));
}

}  // namespace npi

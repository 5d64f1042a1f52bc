#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "npi/adam.hpp"
#include "npi/generate.hpp"
#include "npi/losses.hpp"
#include "npi/lm.hpp"

namespace npi {

struct LMTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t seq_len = 0;  // 0 means c_max
  AdamConfig adam{.lr = 3e-3};
  double final_lr_fraction = 0.1;  // linear decay target
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct LMTrainResult {
  std::vector<double> losses;  // mean batch cross-entropy before each update
};

// Next-token cross-entropy training on random windows of `corpus`.
template <class T>
LMTrainResult train_lm(TransformerLM<T>& lm, std::span<const TokenId> corpus, const LMTrainConfig& cfg) {
  if (corpus.size() < 2) throw DataError("training corpus needs at least 2 tokens");
  const std::size_t seq_len = std::min(cfg.seq_len ? cfg.seq_len : lm.config().c_max, corpus.size() - 1);
  if (seq_len > lm.config().c_max) throw ConfigError("seq_len exceeds c_max");
  for (TokenId t : corpus)
    if (t >= lm.config().vocab_size) throw DataError("corpus token id outside the vocabulary");

  lm.set_trainable(true);
  auto params = lm.parameters();
  for (auto& p : params) p.zero_grad();
  AdamState<T> adam(cfg.adam);
  Rng rng(derive_seed(cfg.seed, "lm.train"));
  LMTrainResult result;
  Tape<T>::current().clear();
  const std::size_t span_count = corpus.size() - seq_len;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const std::size_t off = uniform_index(rng, span_count);
      auto input = corpus.subspan(off, seq_len);
      auto target = corpus.subspan(off + 1, seq_len);
      auto out = lm.forward(input);
      auto loss = scale(cross_entropy(out.logits, target), T(1) / T(cfg.batch));
      batch_loss += double(loss.item());
      backward(loss);
    }
    result.losses.push_back(batch_loss);
    const double progress = cfg.steps > 1 ? double(step) / double(cfg.steps - 1) : 0.0;
    adam.config.lr = cfg.adam.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
    clip_grad_norm<T>(params, cfg.clip_norm);
    adam_step<T>(params, adam);
  }
  lm.set_trainable(false);
  return result;
}

// Trains a fresh model on the corpus and freezes it.
inline TransformerLM<float> pretrain(std::span<const TokenId> corpus, const LMConfig& config,
                                     const LMTrainConfig& train, LMTrainResult* curve = nullptr) {
  if (corpus.empty()) throw DataError("empty corpus");
  TransformerLM<float> lm(config, derive_seed(train.seed, "lm.pretrain"));
  auto result = train_lm(lm, corpus, train);
  if (curve) *curve = std::move(result);
  lm.freeze();
  return lm;
}

// Trains a separate weight copy on the target corpus. `base` is not touched.
inline TransformerLM<float> fine_tune(const TransformerLM<float>& base, std::span<const TokenId> target_corpus,
                                      const LMTrainConfig& train, LMTrainResult* curve = nullptr) {
  if (target_corpus.empty()) throw DataError("empty fine-tuning corpus");
  auto copy = base.copy_as<float>();
  auto result = train_lm(copy, target_corpus, train);
  if (curve) *curve = std::move(result);
  copy.freeze();
  if (base.frozen()) base.verify_frozen();
  return copy;
}

// Fraction of positions where the argmax prediction equals the next token.
template <class T>
double next_token_accuracy(const TransformerLM<T>& lm, std::span<const TokenId> tokens) {
  NoGradGuard<T> guard;
  std::size_t hits = 0, total = 0;
  const std::size_t c_max = lm.config().c_max;
  for (std::size_t start = 0; start + 1 < tokens.size(); start += c_max) {
    const std::size_t len = std::min(c_max, tokens.size() - 1 - start);
    auto out = lm.forward(tokens.subspan(start, len));
    const std::size_t v = out.logits.cols();
    for (std::size_t i = 0; i < len; ++i) {
      auto row = out.logits.data().subspan(i * v, v);
      hits += argmax_token(row) == tokens[start + i + 1];
      ++total;
    }
  }
  return total ? double(hits) / double(total) : 0.0;
}

}  // namespace npi

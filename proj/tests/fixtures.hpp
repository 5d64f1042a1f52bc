#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "npi/corpus.hpp"
#include "npi/lm.hpp"
#include "npi/lm_train.hpp"
#include "npi/vocab.hpp"

#ifndef NPI_FIXTURE_DIR
#define NPI_FIXTURE_DIR "."
#endif

namespace npi::testing {

// A small word-level model pretrained on the synthetic grammar. Trained once
// and cached next to the test binaries so every suite shares the same weights.
struct ToyWorld {
  std::string text;
  Vocabulary vocab;
  Tokens corpus;
  TransformerLM<float> lm;
};

inline LMConfig toy_lm_config(std::size_t vocab) {
  LMConfig c;
  c.n_blocks = 2;
  c.d_model = 32;
  c.n_heads = 2;
  c.c_max = 24;
  c.vocab_size = vocab;
  c.tokenizer = TokenizerKind::word;
  return c;
}

inline const ToyWorld& toy_world() {
  static const ToyWorld world = [] {
    ToyWorld w;
    w.text = synthetic_corpus({.sentences = 6000, .target_rate = 0.03, .seed = 11});
    w.vocab = Vocabulary::build(w.text, TokenizerKind::word);
    w.corpus = w.vocab.tokenize(w.text);
    const auto path = std::filesystem::path(NPI_FIXTURE_DIR) / "toy_world_v1.npiw";
    if (std::filesystem::exists(path)) {
      w.lm = TransformerLM<float>::load(path.string());
    } else {
      w.lm = pretrain(w.corpus, toy_lm_config(w.vocab.size()), {.steps = 3000, .batch = 8, .seed = 3});
      const auto tmp = path.string() + ".tmp" + std::to_string(::getpid());
      w.lm.save(tmp);
      std::filesystem::rename(tmp, path);
    }
    w.lm.freeze();
    return w;
  }();
  return world;
}

}  // namespace npi::testing

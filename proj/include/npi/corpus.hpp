#pragma once

#include <string>
#include <vector>

#include "npi/rng.hpp"
#include "npi/vocab.hpp"

namespace npi {

// Toy English-like grammar. Sentences come in topic runs: each run follows one
// animal, which carries over to the next sentence unless a switch is drawn.
// The target word is one of the animals and is picked with probability
// `target_rate` whenever an animal is drawn, so its frequency in both the
// corpus and the model's greedy continuations is controlled by that knob.
struct SyntheticCorpusConfig {
  std::size_t sentences = 20000;
  std::string target = "cat";
  double target_rate = 0.015;
  double switch_rate = 0.25;
  std::uint64_t seed = 1;
};

namespace grammar {

inline const std::vector<std::string>& animals() {
  static const std::vector<std::string> v{"dog", "cow", "pig", "hen", "fox", "owl"};
  return v;
}
inline const std::vector<std::string>& objects() {
  static const std::vector<std::string> v{"mat", "box", "bed", "rug", "log", "hill"};
  return v;
}
inline const std::vector<std::string>& foods() {
  static const std::vector<std::string> v{"bread", "corn", "fish", "seeds", "grass"};
  return v;
}
inline const std::vector<std::string>& places() {
  static const std::vector<std::string> v{"barn", "farm", "pond", "field", "yard"};
  return v;
}
inline const std::vector<std::string>& adjectives() {
  static const std::vector<std::string> v{"happy", "tired", "small", "calm", "quick"};
  return v;
}

}  // namespace grammar

inline std::string synthetic_corpus(const SyntheticCorpusConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "corpus"));
  auto pick = [&](const std::vector<std::string>& v) -> const std::string& { return v[uniform_index(rng, v.size())]; };
  auto draw_animal = [&]() -> std::string {
    if (uniform01(rng) < cfg.target_rate) return cfg.target;
    std::string a;
    do {
      a = pick(grammar::animals());
    } while (a == cfg.target);
    return a;
  };
  std::string animal = draw_animal();
  std::string out;
  for (std::size_t s = 0; s < cfg.sentences; ++s) {
    if (uniform01(rng) < cfg.switch_rate) animal = draw_animal();
    const std::string& a = animal;
    switch (uniform_index(rng, 7)) {
      case 0: out += "the " + a + " sat on the " + pick(grammar::objects()) + " ."; break;
      case 1: out += "the " + a + " ate the " + pick(grammar::foods()) + " ."; break;
      case 2: out += "the " + a + " ran to the " + pick(grammar::places()) + " ."; break;
      case 3: out += "the " + a + " was very " + pick(grammar::adjectives()) + " ."; break;
      case 4: out += "a " + pick(grammar::adjectives()) + " " + a + " slept on the " + pick(grammar::objects()) + " ."; break;
      case 5: out += "the sun was warm on the " + pick(grammar::places()) + " ."; break;
      default: out += "it rained on the " + pick(grammar::places()) + " ."; break;
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t i = 0;
  while (i < text.size()) {
    auto j = text.find('\n', i);
    if (j == std::string::npos) j = text.size();
    if (j > i) lines.push_back(text.substr(i, j - i));
    i = j + 1;
  }
  return lines;
}

// `count` windows of `length` tokens starting at random offsets.
inline std::vector<Tokens> sample_contexts(std::span<const TokenId> tokens, std::size_t count, std::size_t length,
                                           Rng& rng) {
  if (tokens.size() < length || length == 0) throw DataError("corpus shorter than the requested context length");
  std::vector<Tokens> out;
  out.reserve(count);
  const std::size_t span_count = tokens.size() - length + 1;
  for (std::size_t i = 0; i < count; ++i) {
    const auto off = uniform_index(rng, span_count);
    out.emplace_back(tokens.begin() + off, tokens.begin() + off + length);
  }
  return out;
}

}  // namespace npi

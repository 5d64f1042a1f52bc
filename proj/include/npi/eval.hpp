#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "npi/control.hpp"
#include "npi/digest.hpp"
#include "npi/embedding.hpp"
#include "npi/generate.hpp"
#include "npi/metrics.hpp"
#include "npi/vocab.hpp"

namespace npi {

// ------------------------------------------------------------ text metrics

// Fraction of outputs on which the metric fires (whole-word, case-insensitive
// for word metrics).
inline double target_in_output(std::span<const std::string> outputs, const TargetMetric& target) {
  if (outputs.empty()) throw UndefinedError("target_in_output of an empty output set");
  std::size_t hits = 0;
  for (const auto& o : outputs) hits += target.fires(o);
  return double(hits) / double(outputs.size());
}

struct ShiftMetrics {
  double embed_shifts = 0.0;
  double avg_shift = 0.0;
  std::vector<bool> shift_flags;
  std::vector<double> shift_distances;
};

// A pair shifts when the controlled output lies strictly closer to the target
// embedding than the original output does.
inline ShiftMetrics embed_shift_metrics(std::span<const std::string> original, std::span<const std::string> controlled,
                                        const std::string& target, const EmbeddingTable& table,
                                        DistanceKind distance = DistanceKind::euclidean) {
  if (original.size() != controlled.size()) {
    throw PairingError("embed shift needs paired outputs: " + std::to_string(original.size()) + " originals vs " +
                       std::to_string(controlled.size()) + " controlled");
  }
  ShiftMetrics m;
  if (original.empty()) return m;
  const auto t = embed_sentence(target, table);
  std::size_t shifts = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const auto o = embed_sentence(original[i], table), c = embed_sentence(controlled[i], table);
    const bool shift = vector_distance(c, t, distance) < vector_distance(o, t, distance);
    const double d = vector_distance(c, o, distance);
    shifts += shift;
    total += d;
    m.shift_flags.push_back(shift);
    m.shift_distances.push_back(d);
  }
  m.embed_shifts = double(shifts) / double(original.size());
  m.avg_shift = total / double(original.size());
  return m;
}

struct WordLengthMetrics {
  double avg_word_length = 0.0;
  double num_long_words = 0.0;
};

inline double mean_word_length(std::string_view text) {
  const auto words = metric_words(text);
  if (words.empty()) return 0.0;
  double chars = 0;
  for (const auto& w : words) chars += double(w.size());
  return chars / double(words.size());
}

inline std::size_t count_long_words(std::string_view text, double threshold) {
  std::size_t n = 0;
  for (const auto& w : metric_words(text)) n += double(w.size()) > threshold;
  return n;
}

// Per-output mean characters per word, averaged over outputs, and the mean
// number of words longer than `threshold`.
inline WordLengthMetrics word_length_metrics(std::span<const std::string> outputs, double threshold) {
  if (outputs.empty()) throw UndefinedError("word length metrics of an empty output set");
  WordLengthMetrics m;
  for (const auto& o : outputs) {
    m.avg_word_length += mean_word_length(o);
    m.num_long_words += double(count_long_words(o, threshold));
  }
  m.avg_word_length /= double(outputs.size());
  m.num_long_words /= double(outputs.size());
  return m;
}

// Mean plus two standard deviations of word length over reference sentences.
inline double fit_long_word_threshold(std::span<const std::string> sentences) {
  std::vector<double> lengths;
  for (const auto& s : sentences)
    for (const auto& w : metric_words(s)) lengths.push_back(double(w.size()));
  if (lengths.empty()) throw UndefinedError("no words to fit a word length threshold");
  double mean = 0;
  for (double l : lengths) mean += l;
  mean /= double(lengths.size());
  double var = 0;
  for (double l : lengths) var += (l - mean) * (l - mean);
  var /= double(lengths.size());
  return mean + 2.0 * std::sqrt(var);
}

// ------------------------------------------------------------- baselines

enum class WordProbMode { induce, avoid };

// Token sequences for each target word or phrase of the metric.
inline std::vector<Tokens> target_token_sequences(const Vocabulary& vocab, const TargetMetric& metric) {
  if (metric.words.empty()) throw ConfigError("the word-probability baseline needs a word target");
  std::vector<Tokens> out;
  for (const auto& w : metric.words) {
    auto ids = vocab.tokenize(w);
    const bool bad = ids.empty() || std::any_of(ids.begin(), ids.end(), [](TokenId t) { return t == Vocabulary::kUnk; });
    if (bad) throw ConfigError("target \"" + w + "\" cannot be tokenized by the model vocabulary");
    out.push_back(std::move(ids));
  }
  return out;
}

// Control by editing output probabilities directly. induce: whenever a
// target's first token has non-zero probability, the whole target sequence is
// emitted; otherwise the sampler picks. avoid: every target token's logit is
// set to -inf before sampling.
template <class T>
Tokens word_prob_baseline(const TransformerLM<T>& lm, std::span<const TokenId> context, std::size_t steps,
                          const std::vector<Tokens>& targets, WordProbMode mode, const SamplerConfig& sampler_cfg = {}) {
  if (context.empty()) throw DataError("baseline generation needs a non-empty context");
  if (targets.empty()) throw ConfigError("no target tokens for the word-probability baseline");
  NoGradGuard<T> no_grad;
  Sampler sampler(sampler_cfg);
  std::vector<bool> masked(lm.config().vocab_size, false);
  for (const auto& t : targets)
    for (TokenId id : t) masked.at(id) = true;
  Tokens seq(context.begin(), context.end());
  Tokens out;
  while (out.size() < steps) {
    auto res = lm.forward(context_window(seq, lm.config().c_max));
    auto logits = last_row(res.logits);
    std::vector<double> lg(logits.begin(), logits.end());
    TokenId next;
    if (mode == WordProbMode::avoid) {
      for (std::size_t i = 0; i < lg.size(); ++i)
        if (masked[i]) lg[i] = -std::numeric_limits<double>::infinity();
      next = sampler.sample(std::span<const double>(lg));
    } else {
      const double mx = *std::max_element(lg.begin(), lg.end());
      double z = 0;
      for (double v : lg) z += std::exp(v - mx);
      const Tokens* best = nullptr;
      double best_p = 0.0;
      for (const auto& t : targets) {
        const double p = std::exp(lg[t.front()] - mx) / z;
        if (p > best_p) {
          best_p = p;
          best = &t;
        }
      }
      if (best) {
        for (TokenId id : *best) {
          if (out.size() == steps) break;
          out.push_back(id);
          seq.push_back(id);
        }
        continue;
      }
      next = sampler.sample(std::span<const double>(lg));
    }
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

// Plain generation split into windows of `w` tokens, each with its own
// sampler stream; matches controlled_continue under a zero perturbation.
template <class T>
Tokens windowed_generate(const TransformerLM<T>& lm, std::span<const TokenId> context, std::size_t w,
                         const SamplerConfig& sampler, std::size_t steps) {
  Tokens seq(context.begin(), context.end());
  Tokens out;
  std::size_t window = 0;
  while (out.size() < steps) {
    SamplerConfig sc = sampler;
    sc.seed = derive_seed(sampler.seed, "window." + std::to_string(window++));
    auto gen = generate(lm, context_window(seq, lm.config().c_max), w, sc, false);
    for (TokenId t : gen.tokens) {
      if (out.size() == steps) break;
      out.push_back(t);
      seq.push_back(t);
    }
  }
  return out;
}

// Perplexity proxy: perplexity of the continuation under the frozen,
// unmodified LM, conditioned on the context. Not a fluency score.
template <class T>
double continuation_perplexity(const TransformerLM<T>& lm, std::span<const TokenId> context,
                               std::span<const TokenId> continuation) {
  if (continuation.empty()) throw UndefinedError("perplexity of an empty continuation");
  const auto ctx = context_window(context, lm.config().c_max);
  Tokens all(ctx.begin(), ctx.end());
  all.insert(all.end(), continuation.begin(), continuation.end());
  return std::exp(sum_nll(lm, all, ctx.size()) / double(continuation.size()));
}

// ------------------------------------------------------------- evaluation

enum class ModelKind { unmodified, npi, word_prob_induce, word_prob_avoid, alternate_lm };

struct ModelSpec {
  std::string id = "unmodified";
  ModelKind kind = ModelKind::unmodified;
  NPIFunction<float> npi{};                        // ModelKind::npi
  const TransformerLM<float>* alternate = nullptr;  // ModelKind::alternate_lm, e.g. a fine-tuned copy
};

struct EvalConfig {
  ControlConfig control;
  std::size_t steps = 0;  // 0 means one window (control.w tokens)
  SamplerConfig sampler{};
  DistanceKind distance = DistanceKind::euclidean;
  double long_word_threshold = 6.0;
  bool require_prescreened = false;  // every original output must contain the target
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

struct EvalRow {
  std::size_t context_id = 0;
  std::string original_text, controlled_text;
  bool original_hit = false, target_hit = false;
  bool shift_flag = false;
  double shift_distance = 0.0;
  double perplexity = 0.0, original_perplexity = 0.0;
  double avg_word_length = 0.0;
  std::size_t long_words = 0;
};

struct EvalReport {
  std::string model_id;
  std::string target;
  std::size_t n = 0;
  double target_in_output = 0.0;
  double original_target_in_output = 0.0;
  double embed_shifts = 0.0;
  double avg_shift = 0.0;
  double avg_word_length = 0.0;
  double num_long_words = 0.0;
  double perplexity_proxy = 0.0;
  double original_perplexity_proxy = 0.0;
  std::vector<EvalRow> rows;
};

// Summary fields as a deterministic fold over the rows.
inline void summarize(EvalReport& r) {
  r.n = r.rows.size();
  if (r.rows.empty()) throw UndefinedError("evaluation over zero contexts");
  double hit = 0, ohit = 0, shift = 0, dist = 0, len = 0, longw = 0, ppl = 0, oppl = 0;
  for (const auto& row : r.rows) {
    hit += row.target_hit;
    ohit += row.original_hit;
    shift += row.shift_flag;
    dist += row.shift_distance;
    len += row.avg_word_length;
    longw += double(row.long_words);
    ppl += row.perplexity;
    oppl += row.original_perplexity;
  }
  const double n = double(r.n);
  r.target_in_output = hit / n;
  r.original_target_in_output = ohit / n;
  r.embed_shifts = shift / n;
  r.avg_shift = dist / n;
  r.avg_word_length = len / n;
  r.num_long_words = longw / n;
  r.perplexity_proxy = ppl / n;
  r.original_perplexity_proxy = oppl / n;
}

inline nlohmann::json to_json(const EvalRow& row) {
  return {{"context_id", row.context_id},
          {"original_text", row.original_text},
          {"controlled_text", row.controlled_text},
          {"original_hit", row.original_hit},
          {"target_hit", row.target_hit},
          {"shift_flag", row.shift_flag},
          {"shift_distance", row.shift_distance},
          {"perplexity", row.perplexity},
          {"original_perplexity", row.original_perplexity},
          {"avg_word_length", row.avg_word_length},
          {"long_words", row.long_words}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return {{"model_id", r.model_id},
          {"target", r.target},
          {"n", r.n},
          {"target_in_output", r.target_in_output},
          {"original_target_in_output", r.original_target_in_output},
          {"embed_shifts", r.embed_shifts},
          {"avg_shift", r.avg_shift},
          {"avg_word_length", r.avg_word_length},
          {"num_long_words", r.num_long_words},
          {"perplexity_proxy", r.perplexity_proxy},
          {"original_perplexity_proxy", r.original_perplexity_proxy},
          {"rows", rows}};
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Per-context rows as CSV.
inline std::string to_csv(const EvalReport& r) {
  std::string out = "context_id,original_text,controlled_text,target_hit,shift_flag,shift_distance,perplexity\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.context_id) + "," + csv_field(row.original_text) + "," +
           csv_field(row.controlled_text) + "," + (row.target_hit ? "1" : "0") + "," + (row.shift_flag ? "1" : "0") +
           "," + format_double(row.shift_distance) + "," + format_double(row.perplexity) + "\n";
  }
  return out;
}

// The phrase whose embedding the shift metric moves toward.
inline std::string embedding_target(const TargetMetric& metric) {
  std::string t;
  for (const auto& w : metric.words) t += (t.empty() ? "" : " ") + w;
  return t;
}

// Generates an original (unmodified) and a controlled continuation for every
// context and scores both. Rows are computed independently and merged in
// context order, so `jobs` never changes the result.
inline EvalReport evaluate(const ModelSpec& model, const TransformerLM<float>& lm, const Vocabulary& vocab,
                           std::span<const Tokens> contexts, const TargetMetric& metric, const EmbeddingTable& table,
                           const EvalConfig& cfg) {
  if (contexts.empty()) throw UndefinedError("evaluation over zero contexts");
  cfg.control.validate(lm.config());
  if (lm.frozen()) lm.verify_frozen();
  if (model.kind == ModelKind::npi && !model.npi) throw ConfigError("NPI model spec without a network");
  if (model.kind == ModelKind::alternate_lm && !model.alternate) throw ConfigError("model spec without its LM");
  std::vector<Tokens> targets;
  if (model.kind == ModelKind::word_prob_induce || model.kind == ModelKind::word_prob_avoid)
    targets = target_token_sequences(vocab, metric);
  const std::size_t steps = cfg.steps ? cfg.steps : cfg.control.w;
  const std::string target_text = embedding_target(metric);
  const auto target_vec = embed_sentence(target_text, table);

  std::vector<EvalRow> rows(contexts.size());
  auto run_one = [&](std::size_t i) {
    const Tokens& ctx = contexts[i];
    SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(cfg.seed, "eval." + std::to_string(i));
    Tokens original = windowed_generate(lm, ctx, cfg.control.w, sc, steps);
    Tokens controlled;
    switch (model.kind) {
      case ModelKind::unmodified: controlled = original; break;
      case ModelKind::npi: {
        NoGradGuard<float> no_grad;
        controlled = controlled_continue(lm, ctx, model.npi, cfg.control, sc, steps);
        break;
      }
      case ModelKind::word_prob_induce:
        controlled = word_prob_baseline(lm, ctx, steps, targets, WordProbMode::induce, sc);
        break;
      case ModelKind::word_prob_avoid:
        controlled = word_prob_baseline(lm, ctx, steps, targets, WordProbMode::avoid, sc);
        break;
      case ModelKind::alternate_lm:
        controlled = windowed_generate(*model.alternate, ctx, cfg.control.w, sc, steps);
        break;
    }
    EvalRow row;
    row.context_id = i;
    row.original_text = vocab.detokenize(original);
    row.controlled_text = vocab.detokenize(controlled);
    row.original_hit = metric.fires(row.original_text);
    row.target_hit = metric.fires(row.controlled_text);
    const auto o = embed_sentence(row.original_text, table), c = embed_sentence(row.controlled_text, table);
    row.shift_flag = !target_text.empty() &&
                     vector_distance(c, target_vec, cfg.distance) < vector_distance(o, target_vec, cfg.distance);
    row.shift_distance = vector_distance(c, o, cfg.distance);
    row.original_perplexity = continuation_perplexity(lm, ctx, original);
    row.perplexity = controlled == original ? row.original_perplexity : continuation_perplexity(lm, ctx, controlled);
    row.avg_word_length = mean_word_length(row.controlled_text);
    row.long_words = count_long_words(row.controlled_text, cfg.long_word_threshold);
    rows[i] = std::move(row);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, contexts.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < contexts.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        try {
          for (std::size_t i = j; i < contexts.size(); i += jobs) run_one(i);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  if (cfg.require_prescreened)
    for (const auto& row : rows)
      if (!row.original_hit)
        throw DataError("context " + std::to_string(row.context_id) +
                        " was not pre-screened: its unmodified output lacks the target");
  EvalReport report;
  report.model_id = model.id;
  report.target = metric.describe();
  report.rows = std::move(rows);
  summarize(report);
  if (lm.frozen()) lm.verify_frozen();
  return report;
}

// Keeps contexts whose unmodified continuation contains the target, up to
// `limit` of them, in input order.
inline std::vector<Tokens> prescreen_contexts(const TransformerLM<float>& lm, const Vocabulary& vocab,
                                              std::span<const Tokens> candidates, const TargetMetric& metric,
                                              const EvalConfig& cfg, std::size_t limit) {
  const std::size_t steps = cfg.steps ? cfg.steps : cfg.control.w;
  std::vector<Tokens> out;
  for (std::size_t i = 0; i < candidates.size() && out.size() < limit; ++i) {
    SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(cfg.seed, "eval." + std::to_string(out.size()));
    auto text = vocab.detokenize(windowed_generate(lm, candidates[i], cfg.control.w, sc, steps));
    if (metric.fires(text)) out.push_back(candidates[i]);
  }
  return out;
}

}  // namespace npi

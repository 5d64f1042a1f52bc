#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npi/binary_io.hpp"
#include "npi/control.hpp"
#include "npi/digest.hpp"
#include "npi/generate.hpp"
#include "npi/lm.hpp"
#include "npi/metrics.hpp"
#include "npi/vocab.hpp"

namespace npi {

struct DataExample {
  Tensor<float> S;  // flattened activation sequence [1 × w·m·c_max·d]
  int label = 0;
  Tokens input;     // T_in: the truncated context that reproduces the window

  bool operator==(const DataExample& o) const {
    return label == o.label && input == o.input && S.shape() == o.S.shape() &&
           std::equal(S.data().begin(), S.data().end(), o.S.data().begin());
  }
};

struct HarvestConfig {
  ControlConfig control;
  std::size_t max_iterations = 0;  // 0 means 4·w
  SamplerConfig sampler{};         // top_k=1 by default

  std::size_t iterations() const { return max_iterations ? max_iterations : 4 * control.w; }
};

// Generates up to max_iterations tokens from `context`. If the metric fires on
// some prefix of the output, the w-pass window is centered on the first firing
// token (start = p − ⌊w/2⌋, clamped); otherwise the window is the first w
// passes. The label is always the metric on the window text. A window cut so
// that its label disagrees with the run having fired is rejected (nullopt).
inline std::optional<DataExample> harvest_example(const TransformerLM<float>& lm, const Vocabulary& vocab,
                                                  std::span<const TokenId> context, const TargetMetric& metric,
                                                  const HarvestConfig& cfg) {
  if (context.empty()) throw DataError("harvest needs a context of at least one token");
  const auto& control = cfg.control;
  control.validate(lm.config());
  const std::size_t w = control.w, iters = cfg.iterations();
  if (iters < w) throw ConfigError("max_iterations must be at least w");

  auto gen = generate(lm, context, iters, cfg.sampler, true);
  std::optional<std::size_t> fire;
  const bool fire_label = metric.polarity;
  for (std::size_t p = 0; p < iters && !fire; ++p) {
    if (metric.fires(vocab.detokenize(std::span<const TokenId>(gen.tokens).first(p + 1)))) fire = p;
  }
  std::size_t start = 0;
  if (fire) {
    start = *fire >= w / 2 ? *fire - w / 2 : 0;
    start = std::min(start, iters - w);
  }
  const std::span<const TokenId> window(gen.tokens.data() + start, w);
  DataExample ex;
  ex.label = metric.label(vocab.detokenize(window));
  if (fire && (ex.label == 1) != fire_label) return std::nullopt;

  ActivationSequence<float> seq;
  for (std::size_t x = start; x < start + w; ++x) seq.push_back(extract_controls(gen.hidden[x], control));
  {
    NoGradGuard<float> no_grad;
    ex.S = flatten_sequence(seq);
  }
  Tokens full(context.begin(), context.end());
  full.insert(full.end(), gen.tokens.begin(), gen.tokens.begin() + static_cast<std::ptrdiff_t>(start));
  auto tin = context_window(full, control.c_max);
  ex.input.assign(tin.begin(), tin.end());
  return ex;
}

// Accepts an example only if the class counts stay within
// max(tolerance·total, 1) of each other afterwards.
class BalanceFilter {
 public:
  explicit BalanceFilter(double tolerance = 0.1) : tolerance_(tolerance) {
    if (!(tolerance > 0.0 && tolerance <= 0.5)) throw ConfigError("balance tolerance must be in (0, 0.5]");
  }

  bool would_accept(int label) const {
    std::size_t c[2] = {counts_[0], counts_[1]};
    ++c[label ? 1 : 0];
    const double total = double(c[0] + c[1]);
    const double gap = std::abs(double(c[1]) - double(c[0]));
    return gap <= std::max(tolerance_ * total, 1.0);
  }

  bool offer(int label) {
    if (!would_accept(label)) return false;
    ++counts_[label ? 1 : 0];
    return true;
  }

  std::size_t count(int label) const { return counts_[label ? 1 : 0]; }
  std::size_t total() const { return counts_[0] + counts_[1]; }

 private:
  double tolerance_;
  std::size_t counts_[2] = {0, 0};
};

// Word-boundary insertion positions: every index for word vocabularies; the
// start or just after a separator token for character vocabularies.
inline std::vector<std::size_t> word_boundaries(std::span<const TokenId> ctx, const Vocabulary& vocab) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i <= ctx.size(); ++i) {
    if (vocab.kind() == TokenizerKind::word || i == 0 || vocab.is_separator(ctx[i - 1])) out.push_back(i);
  }
  return out;
}

// With probability `rate`, inserts `target` at a uniform-random word boundary.
// For character vocabularies `target` should end with a separator.
inline Tokens inject_rare_tokens(std::span<const TokenId> ctx, std::span<const TokenId> target, double rate, Rng& rng,
                                 const Vocabulary& vocab, bool* inserted = nullptr) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("injection rate must be in [0, 1]");
  Tokens out(ctx.begin(), ctx.end());
  if (inserted) *inserted = false;
  if (target.empty() || uniform01(rng) >= rate) return out;
  const auto positions = word_boundaries(ctx, vocab);
  const std::size_t at = positions[uniform_index(rng, positions.size())];
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(at), target.begin(), target.end());
  if (inserted) *inserted = true;
  return out;
}

struct Dataset {
  TargetMetric metric;
  ControlConfig control;
  std::size_t d_model = 0;
  Digest lm_digest{};
  std::uint64_t seed = 0;
  std::vector<DataExample> examples;
  bool partial = false;  // set when N_target could not be reached

  std::size_t count(int label) const {
    std::size_t n = 0;
    for (const auto& e : examples) n += e.label == label;
    return n;
  }
  std::size_t flat_size() const { return control.flat_size(d_model); }
};

struct DatagenConfig {
  HarvestConfig harvest;
  std::size_t n_target = 1000;
  double balance_tolerance = 0.1;
  double inject_rate = 0.5;
  Tokens inject_tokens{};  // empty disables injection
  std::uint64_t seed = 0;
};

// Walks `contexts` in order, injecting target tokens while the firing class is
// short, harvesting one example per context and keeping those the balance
// filter accepts. Stops at n_target or when contexts run out (partial).
inline Dataset build_dataset(const TransformerLM<float>& lm, const Vocabulary& vocab, std::span<const Tokens> contexts,
                             const TargetMetric& metric, const DatagenConfig& cfg) {
  if (lm.frozen()) lm.verify_frozen();
  cfg.harvest.control.validate(lm.config());
  Dataset ds;
  ds.metric = metric;
  ds.control = cfg.harvest.control;
  ds.d_model = lm.config().d_model;
  ds.lm_digest = lm.digest();
  ds.seed = cfg.seed;
  BalanceFilter filter(cfg.balance_tolerance);
  Rng rng(derive_seed(cfg.seed, "datagen.inject"));
  const int fire_label = metric.polarity ? 1 : 0;
  for (const auto& ctx : contexts) {
    if (ds.examples.size() >= cfg.n_target) break;
    if (ctx.empty()) continue;
    Tokens input = ctx;
    if (!cfg.inject_tokens.empty() && filter.count(fire_label) < filter.count(1 - fire_label)) {
      input = inject_rare_tokens(ctx, cfg.inject_tokens, cfg.inject_rate, rng, vocab);
    }
    auto ex = harvest_example(lm, vocab, context_window(input, lm.config().c_max), metric, cfg.harvest);
    if (!ex || !filter.offer(ex->label)) continue;
    ds.examples.push_back(std::move(*ex));
  }
  ds.partial = ds.examples.size() < cfg.n_target;
  return ds;
}

namespace detail {

inline void write_metric(ByteWriter& w, const TargetMetric& m) {
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u8(m.polarity ? 1 : 0);
  w.f32(m.threshold);
  w.u16(static_cast<std::uint16_t>(m.words.size()));
  for (const auto& s : m.words) {
    w.u16(static_cast<std::uint16_t>(s.size()));
    w.raw(s);
  }
}

inline TargetMetric read_metric(ByteReader& r) {
  TargetMetric m;
  const auto tag = r.u8();
  if (tag > 2) throw FormatError("unknown metric tag " + std::to_string(tag));
  m.kind = static_cast<MetricKind>(tag);
  m.polarity = r.u8() != 0;
  m.threshold = r.f32();
  const auto n = r.u16();
  for (std::uint16_t i = 0; i < n; ++i) m.words.push_back(r.raw(r.u16()));
  return m;
}

}  // namespace detail

inline constexpr char kDatasetMagic[4] = {'N', 'P', 'I', 'Q'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::string encode_dataset(const Dataset& ds) {
  const auto& c = ds.control;
  if (c.w > 0xffff || c.m() > 0xffff || c.c_max > 0xffff || ds.d_model > 0xffff)
    throw FormatError("dataset dimensions exceed the u16 header fields");
  ByteWriter w;
  w.raw(std::string_view(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.examples.size()));
  w.u16(static_cast<std::uint16_t>(c.w));
  w.u16(static_cast<std::uint16_t>(c.m()));
  w.u16(static_cast<std::uint16_t>(c.c_max));
  w.u16(static_cast<std::uint16_t>(ds.d_model));
  for (auto t : c.taps) w.u16(static_cast<std::uint16_t>(t));
  detail::write_metric(w, ds.metric);
  w.raw(std::string_view(reinterpret_cast<const char*>(ds.lm_digest.data()), ds.lm_digest.size()));
  w.u64(ds.seed);
  const std::size_t n = ds.flat_size();
  for (const auto& e : ds.examples) {
    if (e.S.size() != n) throw DimensionError("example activation size does not match the dataset shape");
    if (e.input.size() > 0xffff) throw FormatError("input token count exceeds u16");
    w.u8(static_cast<std::uint8_t>(e.label));
    w.u16(static_cast<std::uint16_t>(e.input.size()));
    for (auto t : e.input) w.u32(t);
    w.f32s(e.S.data().data(), n);
  }
  return w.take();
}

inline Dataset decode_dataset(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != std::string_view(kDatasetMagic, 4)) throw FormatError("not an NPIQ dataset (bad magic)");
  const auto version = r.u32();
  if (version != kDatasetVersion) throw FormatError("unsupported NPIQ version " + std::to_string(version));
  Dataset ds;
  const auto count = r.u32();
  ds.control.w = r.u16();
  const auto m = r.u16();
  ds.control.c_max = r.u16();
  ds.d_model = r.u16();
  ds.control.taps.clear();
  for (std::uint16_t i = 0; i < m; ++i) ds.control.taps.push_back(r.u16());
  ds.metric = detail::read_metric(r);
  auto digest = r.raw(32);
  std::copy(digest.begin(), digest.end(), reinterpret_cast<char*>(ds.lm_digest.data()));
  ds.seed = r.u64();
  const std::size_t n = ds.flat_size();
  ds.examples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    DataExample e;
    e.label = r.u8();
    if (e.label > 1) throw FormatError("label must be 0 or 1");
    e.input.resize(r.u16());
    for (auto& t : e.input) t = r.u32();
    std::vector<float> values(n);
    r.f32s(values.data(), n);
    e.S = Tensor<float>({1, n}, std::move(values));
    ds.examples.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after NPIQ dataset");
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) { write_file(path, encode_dataset(ds)); }
inline Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

// Checks the shape and balance invariants; returns a list of violations.
inline std::vector<std::string> audit_dataset(const Dataset& ds, double balance_low = 0.45, double balance_high = 0.55) {
  std::vector<std::string> problems;
  const std::size_t n = ds.flat_size();
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& e = ds.examples[i];
    if (e.S.size() != n) problems.push_back("example " + std::to_string(i) + " has wrong activation size");
    if (e.label != 0 && e.label != 1) problems.push_back("example " + std::to_string(i) + " has a bad label");
    if (e.input.empty() || e.input.size() > ds.control.c_max)
      problems.push_back("example " + std::to_string(i) + " has a bad input length");
  }
  if (ds.examples.size() >= 100) {
    const double frac = double(ds.count(1)) / double(ds.examples.size());
    if (frac < balance_low || frac > balance_high)
      problems.push_back("class balance " + std::to_string(frac) + " outside [" + std::to_string(balance_low) + ", " +
                         std::to_string(balance_high) + "]");
  }
  return problems;
}

}  // namespace npi

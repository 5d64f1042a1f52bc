#include <gtest/gtest.h>

#include <filesystem>
#include <regex>

#include "fixtures.hpp"
#include "npi/datagen.hpp"

using namespace npi;
using npi::testing::toy_world;

namespace {

HarvestConfig harvest_config(std::size_t w = 4) {
  HarvestConfig h;
  h.control = ControlConfig{.taps = {1, 2}, .w = w, .c_max = 24};
  return h;
}

const TargetMetric kCat = TargetMetric::word_presence({"cat"});

}  // namespace

TEST(Label, PaperAndBoundaryExamples) {
  EXPECT_EQ(label("the cat sat", kCat), 1);
  EXPECT_EQ(label("hello world", kCat), 0);
  EXPECT_EQ(label("concatenate strings", kCat), 0);
  EXPECT_EQ(label("The CAT.", kCat), 1);
  EXPECT_EQ(label("cats", kCat), 0);
}

TEST(Label, AgreesWithRegexWordBoundaryOracle) {
  const std::regex oracle("\\bcat\\b", std::regex::icase);
  const std::vector<std::string> pieces{"cat", "Cat", "concat", "cats", "a", " ", ".", ",", "scat", "CAT", "t", "c"};
  Rng rng(5);
  for (int i = 0; i < 3000; ++i) {
    std::string s;
    const auto n = 1 + uniform_index(rng, 6);
    for (std::size_t k = 0; k < n; ++k) s += pieces[uniform_index(rng, pieces.size())];
    EXPECT_EQ(label(s, kCat), std::regex_search(s, oracle) ? 1 : 0) << s;
  }
}

TEST(Label, MetricVariantsAndPolarity) {
  auto phrase = TargetMetric::word_presence({"sat on"});
  EXPECT_EQ(phrase.label("the cat sat on it"), 1);
  EXPECT_EQ(phrase.label("on sat"), 0);
  auto list = TargetMetric::word_list({"dog", "fox"});
  EXPECT_EQ(list.label("a quick fox"), 1);
  EXPECT_EQ(list.label("a quick cat"), 0);
  auto longw = TargetMetric::avg_word_length(4.0f);
  EXPECT_EQ(longw.label("extraordinary vocabulary"), 1);
  EXPECT_EQ(longw.label("a cat"), 0);
  EXPECT_EQ(longw.label(""), 0);
  auto avoid = TargetMetric::word_presence({"cat"}, false);
  EXPECT_EQ(avoid.label("the cat"), 0);
  EXPECT_EQ(avoid.label("the dog"), 1);
}

TEST(Harvest, OverfitModelWithKnownOutput) {
  // The corpus is one repeated sentence, so the overfit model's greedy
  // continuation of "the" is known exactly.
  const std::string text = "the cat sat on the mat . ";
  std::string corpus;
  for (int i = 0; i < 20; ++i) corpus += text;
  auto vocab = Vocabulary::build(corpus, TokenizerKind::word);
  auto ids = vocab.tokenize(corpus);
  LMConfig cfg{.n_blocks = 2, .d_model = 16, .n_heads = 2, .c_max = 16, .vocab_size = vocab.size(),
               .tokenizer = TokenizerKind::word};
  auto lm = pretrain(ids, cfg, {.steps = 300, .batch = 2, .adam = {.lr = 1e-2}, .seed = 1});
  HarvestConfig h;
  h.control = ControlConfig{.taps = {1, 2}, .w = 4, .c_max = 16};
  auto ex = harvest_example(lm, vocab, vocab.tokenize("the mat . the"), kCat, h);
  ASSERT_TRUE(ex);
  EXPECT_EQ(ex->label, 1);
  auto regen = generate(lm, ex->input, 4, SamplerConfig{}, false);
  EXPECT_NE(vocab.detokenize(regen.tokens).find("cat"), std::string::npos);
}

TEST(Harvest, NeverFiringMetricGivesLabelZeroFromRunStart) {
  const auto& w = toy_world();
  auto never = TargetMetric::word_presence({"zebra"});
  Rng rng(2);
  auto ctxs = sample_contexts(w.corpus, 20, 8, rng);
  auto h = harvest_config();
  for (const auto& c : ctxs) {
    auto ex = harvest_example(w.lm, w.vocab, c, never, h);
    ASSERT_TRUE(ex);
    EXPECT_EQ(ex->label, 0);
    EXPECT_EQ(ex->input, c);  // window anchored at generation start
    EXPECT_EQ(ex->S.size(), h.control.flat_size(w.lm.config().d_model));
  }
}

TEST(Harvest, DeterministicAndLabelConsistentWithRegeneration) {
  const auto& w = toy_world();
  Rng rng(3);
  auto ctxs = sample_contexts(w.corpus, 40, 8, rng);
  auto h = harvest_config();
  auto metric = TargetMetric::word_presence({"dog"});
  for (const auto& c : ctxs) {
    auto a = harvest_example(w.lm, w.vocab, c, metric, h);
    auto b = harvest_example(w.lm, w.vocab, c, metric, h);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (!a) continue;
    EXPECT_TRUE(*a == *b);
    // Regenerate the window from T_in and re-label it.
    auto regen = generate(w.lm, a->input, h.control.w, SamplerConfig{}, true);
    EXPECT_EQ(metric.label(w.vocab.detokenize(regen.tokens)), a->label);
    ActivationSequence<float> seq;
    for (auto& hidden : regen.hidden) seq.push_back(extract_controls(hidden, h.control));
    auto s = flatten_sequence(seq);
    EXPECT_TRUE(std::equal(s.data().begin(), s.data().end(), a->S.data().begin()));
  }
}

TEST(Harvest, WindowCentersOnFirstFiring) {
  const auto& w = toy_world();
  auto h = harvest_config(4);
  auto ctx = w.vocab.tokenize("the dog sat on the mat .");
  auto metric = TargetMetric::word_presence({"dog"});
  auto gen = generate(w.lm, ctx, h.iterations(), SamplerConfig{}, false);
  std::size_t first = gen.tokens.size();
  for (std::size_t p = 0; p < gen.tokens.size(); ++p)
    if (w.vocab.token(gen.tokens[p]) == "dog") {
      first = p;
      break;
    }
  ASSERT_LT(first, gen.tokens.size()) << "fixture model should keep the topic animal";
  auto ex = harvest_example(w.lm, w.vocab, ctx, metric, h);
  ASSERT_TRUE(ex);
  const std::size_t start = std::min(first >= 2 ? first - 2 : 0, h.iterations() - 4);
  EXPECT_EQ(ex->input.size(), std::min<std::size_t>(ctx.size() + start, 24));
  EXPECT_EQ(ex->label, 1);
}

TEST(Harvest, EmptyContextIsDataError) {
  const auto& w = toy_world();
  EXPECT_THROW(harvest_example(w.lm, w.vocab, Tokens{}, kCat, harvest_config()), DataError);
}

TEST(Balance, BalancedStreamPassesThrough) {
  BalanceFilter f(0.1);
  std::size_t accepted = 0;
  for (int i = 0; i < 1000; ++i) accepted += f.offer(i % 2);
  EXPECT_GE(accepted, 999u);
}

TEST(Balance, SkewedStreamEndsWithinBand) {
  BalanceFilter f(0.1);
  Rng rng(4);
  for (int i = 0; i < 10000; ++i) f.offer(uniform01(rng) < 0.9 ? 1 : 0);
  const double frac = double(f.count(1)) / double(f.total());
  EXPECT_GE(frac, 0.45);
  EXPECT_LE(frac, 0.55);
  EXPECT_GT(f.count(0), 900u);
}

TEST(Balance, SingleClassStreamIsCapped) {
  BalanceFilter f(0.1);
  for (int i = 0; i < 100; ++i) f.offer(1);
  EXPECT_EQ(f.count(0), 0u);
  EXPECT_EQ(f.total(), 1u);
}

TEST(Balance, ToleranceRange) {
  EXPECT_THROW(BalanceFilter(0.0), ConfigError);
  EXPECT_THROW(BalanceFilter(0.6), ConfigError);
}

TEST(Inject, RateZeroIsNoOp) {
  const auto& w = toy_world();
  Rng rng(1);
  Tokens ctx = w.vocab.tokenize("the dog sat on the mat .");
  Tokens cat = w.vocab.tokenize("cat");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(inject_rare_tokens(ctx, cat, 0.0, rng, w.vocab), ctx);
}

TEST(Inject, RateOneInsertsExactlyOnce) {
  const auto& w = toy_world();
  Rng rng(1);
  Tokens ctx = w.vocab.tokenize("the dog sat on the mat .");
  Tokens cat = w.vocab.tokenize("cat");
  for (int i = 0; i < 100; ++i) {
    auto out = inject_rare_tokens(ctx, cat, 1.0, rng, w.vocab);
    EXPECT_EQ(out.size(), ctx.size() + cat.size());
    EXPECT_EQ(std::count(out.begin(), out.end(), cat[0]), 1);
  }
}

TEST(Inject, CharacterVocabularyUsesWordBoundaries) {
  auto vocab = Vocabulary::build("the dog sat cat ", TokenizerKind::character);
  Rng rng(2);
  Tokens ctx = vocab.tokenize("the dog sat");
  Tokens target = vocab.tokenize("cat ");
  for (int i = 0; i < 200; ++i) {
    auto out = vocab.detokenize(inject_rare_tokens(ctx, target, 1.0, rng, vocab));
    EXPECT_TRUE(out == "cat the dog sat" || out == "the cat dog sat" || out == "the dog cat sat") << out;
  }
}

TEST(Inject, MonteCarloFrequency) {
  const auto& w = toy_world();
  Rng rng(7);
  Tokens ctx = w.vocab.tokenize("the dog sat on the mat .");
  Tokens cat = w.vocab.tokenize("cat");
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    bool inserted = false;
    inject_rare_tokens(ctx, cat, 0.3, rng, w.vocab, &inserted);
    hits += inserted;
  }
  EXPECT_NEAR(hits / 10000.0, 0.3, 0.02);
}

TEST(Dataset, ZeroTargetIsEmptyWithValidHeader) {
  const auto& w = toy_world();
  DatagenConfig cfg{.harvest = harvest_config(), .n_target = 0};
  Rng rng(1);
  auto ctxs = sample_contexts(w.corpus, 5, 8, rng);
  auto ds = build_dataset(w.lm, w.vocab, ctxs, kCat, cfg);
  EXPECT_TRUE(ds.examples.empty());
  EXPECT_FALSE(ds.partial);
  auto back = decode_dataset(encode_dataset(ds));
  EXPECT_EQ(back.control.taps, ds.control.taps);
  EXPECT_EQ(back.metric, kCat);
  EXPECT_EQ(back.lm_digest, w.lm.digest());
}

TEST(Dataset, CorpusExhaustionGivesPartialFlag) {
  const auto& w = toy_world();
  DatagenConfig cfg{.harvest = harvest_config(), .n_target = 50};
  Rng rng(1);
  auto ctxs = sample_contexts(w.corpus, 10, 8, rng);
  auto ds = build_dataset(w.lm, w.vocab, ctxs, kCat, cfg);
  EXPECT_TRUE(ds.partial);
  EXPECT_LE(ds.examples.size(), 10u);
}

class DeskDataset : public ::testing::Test {
 protected:
  static const Dataset& dataset() {
    static const Dataset ds = [] {
      const auto& w = toy_world();
      DatagenConfig cfg{.harvest = harvest_config(), .n_target = 1000, .inject_rate = 0.9,
                        .inject_tokens = w.vocab.tokenize("the cat"), .seed = 5};
      Rng rng(9);
      auto ctxs = sample_contexts(w.corpus, 6000, 10, rng);
      return build_dataset(w.lm, w.vocab, ctxs, kCat, cfg);
    }();
    return ds;
  }
};

TEST_F(DeskDataset, ThousandExamplesBalancedAndShapeConsistent) {
  const auto& ds = dataset();
  ASSERT_EQ(ds.examples.size(), 1000u);
  EXPECT_FALSE(ds.partial);
  EXPECT_TRUE(audit_dataset(ds).empty());
  const double frac = double(ds.count(1)) / 1000.0;
  EXPECT_GE(frac, 0.45);
  EXPECT_LE(frac, 0.55);
}

TEST_F(DeskDataset, LabelsMatchRegeneratedWindows) {
  const auto& ds = dataset();
  const auto& w = toy_world();
  for (std::size_t i = 0; i < ds.examples.size(); i += 10) {
    const auto& e = ds.examples[i];
    auto regen = generate(w.lm, e.input, ds.control.w, SamplerConfig{}, false);
    EXPECT_EQ(kCat.label(w.vocab.detokenize(regen.tokens)), e.label) << i;
  }
}

TEST_F(DeskDataset, RoundTripAndSizeArithmetic) {
  const auto& ds = dataset();
  const auto bytes = encode_dataset(ds);
  std::size_t header = 4 + 4 + 4 + 2 * 4 + 2 * ds.control.m();
  header += 1 + 1 + 4 + 2;
  for (const auto& s : ds.metric.words) header += 2 + s.size();
  header += 32 + 8;
  std::size_t expected = header;
  for (const auto& e : ds.examples) expected += 1 + 2 + 4 * e.input.size() + 4 * ds.control.w * ds.control.m() * 24 * 32;
  EXPECT_EQ(bytes.size(), expected);

  auto path = (std::filesystem::temp_directory_path() / "npi_dataset_roundtrip.npiq").string();
  save_dataset(path, ds);
  auto back = load_dataset(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.examples.size(), ds.examples.size());
  for (std::size_t i = 0; i < ds.examples.size(); ++i) EXPECT_TRUE(back.examples[i] == ds.examples[i]);
  EXPECT_EQ(encode_dataset(back), bytes);
}

TEST_F(DeskDataset, SameSeedGivesByteIdenticalFile) {
  const auto& w = toy_world();
  DatagenConfig cfg{.harvest = harvest_config(), .n_target = 60, .inject_rate = 0.9,
                    .inject_tokens = w.vocab.tokenize("the cat"), .seed = 5};
  Rng r1(9), r2(9);
  auto a = build_dataset(w.lm, w.vocab, sample_contexts(w.corpus, 400, 10, r1), kCat, cfg);
  auto b = build_dataset(w.lm, w.vocab, sample_contexts(w.corpus, 400, 10, r2), kCat, cfg);
  EXPECT_EQ(encode_dataset(a), encode_dataset(b));
}

TEST(DatasetFormat, CorruptionIsFormatError) {
  Dataset ds;
  ds.control = ControlConfig{.taps = {1}, .w = 1, .c_max = 2};
  ds.d_model = 2;
  ds.metric = kCat;
  ds.examples.push_back({Tensor<float>({1, 4}, {1, 2, 3, 4}), 1, {5, 6}});
  auto bytes = encode_dataset(ds);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 3)), FormatError);
  auto ver = bytes;
  ver[4] = 9;
  EXPECT_THROW(decode_dataset(ver), FormatError);
  EXPECT_THROW(decode_dataset(bytes + "x"), FormatError);
  EXPECT_TRUE(decode_dataset(bytes).examples[0] == ds.examples[0]);
}

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "npi/control.hpp"
#include "npi/generate.hpp"
#include "npi/lm.hpp"

using namespace npi;

namespace {

LMConfig config(std::size_t blocks, std::size_t d = 16, std::size_t c_max = 12, std::size_t vocab = 20) {
  LMConfig c;
  c.n_blocks = blocks;
  c.d_model = d;
  c.n_heads = 2;
  c.c_max = c_max;
  c.vocab_size = vocab;
  return c;
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <class T>
ActivationBundle<T> random_bundle(const ControlConfig& cfg, std::size_t d, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  ActivationBundle<T> b;
  for (std::size_t j = 0; j < cfg.m(); ++j) {
    std::vector<T> v(cfg.c_max * d);
    for (auto& x : v) x = T(normal01(rng) * scale);
    b.emplace_back(Shape{cfg.c_max, d}, std::move(v));
  }
  return b;
}

// Standalone forward pass in plain loops, used as an independent oracle.
struct Reference {
  using M = std::vector<std::vector<double>>;
  static M mat(const Tensor<double>& t) {
    M m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
  }
  static M mul(const M& a, const M& b) {
    M c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t k = 0; k < b.size(); ++k)
        for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
  }
  static void add_bias(M& a, const Tensor<double>& b) {
    for (auto& row : a)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  static M norm(const M& x, const Tensor<double>& g, const Tensor<double>& b) {
    M y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double mean = 0, var = 0;
      for (double v : x[i]) mean += v;
      mean /= double(x[i].size());
      for (double v : x[i]) var += (v - mean) * (v - mean);
      var /= double(x[i].size());
      for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g[j] + b[j];
    }
    return y;
  }

  static std::vector<M> forward(TransformerLM<double>& lm, const Tokens& ids, const ActivationBundle<double>* D,
                                const ControlConfig& cfg) {
    const auto& c = lm.config();
    const std::size_t len = ids.size(), d = c.d_model, dh = d / c.n_heads;
    M tok = mat(lm.token_embedding()), pos = mat(lm.position_embedding());
    M x(len, std::vector<double>(d));
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] = tok[ids[i]][j] + pos[i][j];
    std::vector<M> hidden;
    for (std::size_t b = 0; b < c.n_blocks; ++b) {
      auto& blk = lm.block(b);
      M qkv = mul(norm(x, blk.ln1_gain, blk.ln1_bias), mat(blk.w_qkv));
      add_bias(qkv, blk.b_qkv);
      M merged(len, std::vector<double>(d, 0.0));
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        for (std::size_t i = 0; i < len; ++i) {
          std::vector<double> score(i + 1);
          double mx = -1e300;
          for (std::size_t j = 0; j <= i; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < dh; ++k) s += qkv[i][h * dh + k] * qkv[j][d + h * dh + k];
            score[j] = s / std::sqrt(double(dh));
            mx = std::max(mx, score[j]);
          }
          double z = 0;
          for (auto& s : score) z += (s = std::exp(s - mx));
          for (std::size_t j = 0; j <= i; ++j)
            for (std::size_t k = 0; k < dh; ++k) merged[i][h * dh + k] += score[j] / z * qkv[j][2 * d + h * dh + k];
        }
      }
      M proj = mul(merged, mat(blk.w_proj));
      add_bias(proj, blk.b_proj);
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < d; ++j) x[i][j] += proj[i][j];
      M ff = mul(norm(x, blk.ln2_gain, blk.ln2_bias), mat(blk.w_fc));
      add_bias(ff, blk.b_fc);
      for (auto& row : ff)
        for (auto& v : row) v = 0.5 * v * (1 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
      M out = mul(ff, mat(blk.w_out));
      add_bias(out, blk.b_out);
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < d; ++j) x[i][j] += out[i][j];
      for (std::size_t t = 0; D && t < cfg.taps.size(); ++t) {
        if (cfg.taps[t] != b + 1) continue;
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < d; ++j) x[i][j] += (*D)[t].at(i, j);
      }
      hidden.push_back(x);
    }
    return hidden;
  }
};

}  // namespace

TEST(ExtractControls, FullTapsEqualPaddedHidden) {
  TransformerLM<float> lm(config(3), 1);
  Tokens ids{2, 3, 4, 5};
  auto out = lm.forward(ids);
  ControlConfig cfg{.taps = {1, 2, 3}, .w = 2, .c_max = 12};
  auto bundle = extract_controls(out.hidden, cfg);
  ASSERT_EQ(bundle.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(bundle[t].shape(), (Shape{12, 16}));
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 16; ++j)
        EXPECT_EQ(bundle[t].at(i, j), i < ids.size() ? out.hidden[t].at(i, j) : 0.0f);
  }
}

TEST(ExtractControls, LastBlockOnly) {
  TransformerLM<float> lm(config(3), 1);
  Tokens ids{2, 3};
  auto out = lm.forward(ids);
  ControlConfig cfg{.taps = {3}, .w = 1, .c_max = 12};
  auto bundle = extract_controls(out.hidden, cfg);
  ASSERT_EQ(bundle.size(), 1u);
  EXPECT_TRUE(bit_equal(slice_rows(bundle[0], 0, 2), out.hidden[2]));
}

TEST(ExtractControls, BitEqualToForwardHiddenAndSourceUnmodified) {
  TransformerLM<float> lm(config(4), 5);
  Tokens ids{2, 7, 9, 11, 3};
  auto out = lm.forward(ids);
  std::vector<Tensor<float>> copy;
  for (auto& h : out.hidden) copy.push_back(h.clone());
  ControlConfig cfg{.taps = {2, 4}, .w = 1, .c_max = 12};
  auto bundle = extract_controls(out.hidden, cfg);
  EXPECT_TRUE(bit_equal(slice_rows(bundle[0], 0, 5), out.hidden[1]));
  EXPECT_TRUE(bit_equal(slice_rows(bundle[1], 0, 5), out.hidden[3]));
  for (std::size_t i = 0; i < copy.size(); ++i) EXPECT_TRUE(bit_equal(copy[i], out.hidden[i]));
}

TEST(ExtractControls, OutOfRangeTapIsConfigError) {
  TransformerLM<float> lm(config(2), 1);
  auto out = lm.forward(Tokens{2});
  EXPECT_THROW(extract_controls(out.hidden, ControlConfig{.taps = {3}, .w = 1, .c_max = 12}), ConfigError);
  EXPECT_THROW(extract_controls(out.hidden, ControlConfig{.taps = {0}, .w = 1, .c_max = 12}), ConfigError);
}

TEST(ControlConfig, Validation) {
  ControlConfig ok{.taps = {1, 2}, .w = 3, .c_max = 12};
  EXPECT_NO_THROW(ok.validate(config(2)));
  EXPECT_THROW((ControlConfig{.taps = {2, 1}, .w = 3, .c_max = 12}.validate(2)), ConfigError);
  EXPECT_THROW((ControlConfig{.taps = {1, 1}, .w = 3, .c_max = 12}.validate(2)), ConfigError);
  EXPECT_THROW((ControlConfig{.taps = {1}, .w = 0, .c_max = 12}.validate(2)), ConfigError);
  EXPECT_THROW((ControlConfig{.taps = {1}, .w = 13, .c_max = 12}.validate(2)), ConfigError);
}

TEST(NpicForward, ZeroPerturbationIsBitIdentical) {
  TransformerLM<float> lm(config(3), 2);
  ControlConfig cfg{.taps = {1, 3}, .w = 1, .c_max = 12};
  ActivationBundle<float> zeros{Tensor<float>::zeros({12, 16}), Tensor<float>::zeros({12, 16})};
  Tokens ids{3, 4, 5, 6};
  auto plain = lm.forward(ids);
  auto ctrl = npic_forward(lm, ids, &zeros, cfg);
  auto none = npic_forward<float>(lm, ids, nullptr, cfg);
  EXPECT_TRUE(bit_equal(plain.logits, ctrl.logits));
  EXPECT_TRUE(bit_equal(plain.logits, none.logits));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(bit_equal(plain.hidden[i], ctrl.hidden[i]));
}

TEST(NpicForward, PerturbationIsLocalToDownstreamBlocks) {
  TransformerLM<float> lm(config(4), 3);
  for (std::size_t k = 1; k <= 4; ++k) {
    ControlConfig cfg{.taps = {k}, .w = 1, .c_max = 12};
    auto D = random_bundle<float>(cfg, 16, 10 + k);
    for (std::size_t len : {1u, 5u, 12u}) {
      Tokens ids(len);
      for (std::size_t i = 0; i < len; ++i) ids[i] = TokenId(2 + i % 17);
      auto plain = lm.forward(ids);
      auto ctrl = npic_forward(lm, ids, &D, cfg);
      for (std::size_t j = 0; j + 1 < k; ++j) EXPECT_TRUE(bit_equal(plain.hidden[j], ctrl.hidden[j]));
      bool differs = false;
      for (std::size_t j = k - 1; j < 4; ++j) differs = differs || !bit_equal(plain.hidden[j], ctrl.hidden[j]);
      EXPECT_TRUE(differs);
    }
  }
}

TEST(NpicForward, MatchesHandRolledForward) {
  auto c = config(2, 8, 6, 11);
  TransformerLM<double> lm(c, 4);
  // Hand-set non-trivial norms and biases so every parameter matters.
  Rng rng(21);
  for (auto& [name, t] : lm.named_parameters())
    for (auto& v : t.mutable_data()) v += 0.1 * normal01(rng);
  ControlConfig cfg{.taps = {1, 2}, .w = 1, .c_max = 6};
  auto D = random_bundle<double>(cfg, 8, 5);
  Tokens ids{2, 5, 9, 1};
  auto got = npic_forward(lm, ids, &D, cfg);
  auto want = Reference::forward(lm, ids, &D, cfg);
  double worst = 0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < 8; ++j) worst = std::max(worst, std::abs(got.hidden[b].at(i, j) - want[b][i][j]));
  EXPECT_LT(worst, 1e-6);
}

TEST(NpicForward, ShapeMismatchIsInjectionError) {
  TransformerLM<float> lm(config(2), 1);
  ControlConfig cfg{.taps = {1, 2}, .w = 1, .c_max = 12};
  ActivationBundle<float> one{Tensor<float>::zeros({12, 16})};
  EXPECT_THROW(npic_forward(lm, Tokens{2}, &one, cfg), InjectionError);
  ActivationBundle<float> wrong{Tensor<float>::zeros({11, 16}), Tensor<float>::zeros({12, 16})};
  EXPECT_THROW(npic_forward(lm, Tokens{2}, &wrong, cfg), InjectionError);
}

TEST(ControlledGenerate, ZeroNpiReproducesGenerateOverRandomContexts) {
  TransformerLM<float> lm(config(2, 16, 12, 20), 6);
  ControlConfig cfg{.taps = {1, 2}, .w = 3, .c_max = 12};
  Rng rng(99);
  auto npi = zero_npi<float>();
  for (int trial = 0; trial < 1000; ++trial) {
    Tokens ctx(1 + uniform_index(rng, 14));
    for (auto& t : ctx) t = TokenId(uniform_index(rng, 20));
    auto run = controlled_generate(lm, ctx, npi, cfg, SamplerConfig{});
    auto plain = generate(lm, ctx, cfg.w, SamplerConfig{}, false);
    ASSERT_EQ(run.tokens, plain.tokens) << "trial " << trial;
    ASSERT_EQ(run.original, plain.tokens);
  }
}

TEST(ControlledGenerate, ZeroNpiMatchesWithStochasticSampler) {
  TransformerLM<float> lm(config(2), 6);
  ControlConfig cfg{.taps = {2}, .w = 5, .c_max = 12};
  SamplerConfig s{.top_k = 5, .seed = 17};
  auto run = controlled_generate(lm, Tokens{3, 4}, zero_npi<float>(), cfg, s);
  EXPECT_EQ(run.tokens, generate(lm, Tokens{3, 4}, 5, s).tokens);
}

TEST(ControlledGenerate, StructureAndSingleNpiCall) {
  TransformerLM<float> lm(config(3), 7);
  ControlConfig cfg{.taps = {1, 3}, .w = 4, .c_max = 12};
  int calls = 0;
  Rng rng(3);
  NPIFunction<float> npi = [&](const Tensor<float>& s) {
    ++calls;
    EXPECT_EQ(s.size(), cfg.flat_size(16));
    std::vector<float> v(s.size());
    for (auto& x : v) x = float(normal01(rng));
    return Tensor<float>(s.shape(), std::move(v));
  };
  const auto digest = lm.digest();
  auto run = controlled_generate(lm, Tokens{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, npi, cfg, SamplerConfig{});
  EXPECT_EQ(calls, 1);
  ASSERT_EQ(run.S.size(), 4u);
  ASSERT_EQ(run.S_prime.size(), 4u);
  for (std::size_t x = 0; x < 4; ++x) {
    ASSERT_EQ(run.S[x].size(), 2u);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(run.S[x][j].shape(), run.S_prime[x][j].shape());
  }
  EXPECT_EQ(run.tokens.size(), 4u);
  EXPECT_EQ(lm.digest(), digest);

  calls = 0;
  auto cont = controlled_continue(lm, Tokens{2, 3}, npi, cfg, SamplerConfig{}, 10);
  EXPECT_EQ(cont.size(), 10u);
  EXPECT_EQ(calls, 3);
}

TEST(ControlledGenerate, WindowLongerThanContextLimitIsConfigError) {
  TransformerLM<float> lm(config(2, 16, 4), 1);
  ControlConfig cfg{.taps = {1}, .w = 5, .c_max = 4};
  EXPECT_THROW(controlled_generate(lm, Tokens{2}, zero_npi<float>(), cfg, SamplerConfig{}), ConfigError);
}

TEST(ControlledGenerate, PassesBeforeFirstTapAreUnperturbed) {
  TransformerLM<float> lm(config(3), 8);
  ControlConfig cfg{.taps = {2, 3}, .w = 3, .c_max = 12, .teacher_force = true};
  NPIFunction<float> npi = [](const Tensor<float>& s) { return Tensor<float>::full(s.shape(), 0.3f); };
  Tokens ctx{2, 3, 4};
  auto run = controlled_generate(lm, ctx, npi, cfg, SamplerConfig{});
  // With teacher forcing each perturbed pass sees the same tokens as the
  // uncontrolled pass, so block 1 must match exactly.
  Tokens seq = ctx;
  for (std::size_t x = 0; x < cfg.w; ++x) {
    auto D = unflatten_sequence(run.D, cfg, 16);
    auto plain = lm.forward(seq);
    auto ctrl = npic_forward(lm, seq, &D[x], cfg);
    EXPECT_TRUE(bit_equal(plain.hidden[0], ctrl.hidden[0]));
    EXPECT_TRUE(bit_equal(pad_rows(ctrl.hidden[1], 12), run.S_prime[x][0]));
    seq.push_back(run.original[x]);
  }
}

TEST(ControlledGenerate, GradientsReachThePerturbation) {
  TransformerLM<float> lm(config(2), 8);
  ControlConfig cfg{.taps = {1}, .w = 2, .c_max = 12};
  auto D = Tensor<float>::zeros({1, cfg.flat_size(16)}, true);
  NPIFunction<float> npi = [&](const Tensor<float>&) { return add(D, Tensor<float>::zeros(D.shape())); };
  auto run = controlled_generate(lm, Tokens{2, 3}, npi, cfg, SamplerConfig{});
  auto loss = sum(run.S_prime_flat());
  backward(loss);
  double norm = 0;
  for (float g : D.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
  for (auto& p : lm.parameters()) EXPECT_FALSE(p.has_grad() && std::any_of(p.grad().begin(), p.grad().end(), [](float g) { return g != 0; }));
}

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npi/checkpoint.hpp"
#include "npi/digest.hpp"
#include "npi/ops.hpp"
#include "npi/rng.hpp"
#include "npi/vocab.hpp"

namespace npi {

struct LMConfig {
  std::size_t n_blocks = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t c_max = 64;
  std::size_t vocab_size = 0;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  TokenizerKind tokenizer = TokenizerKind::character;

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }

  void validate() const {
    if (n_blocks == 0 || d_model == 0 || n_heads == 0 || c_max == 0) throw ConfigError("LM dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (vocab_size < 3) throw ConfigError("vocabulary needs at least one token besides <pad> and <unk>");
  }

  bool operator==(const LMConfig&) const = default;
};

// Small pre-norm GPT-style decoder. The output of block i (after both
// residual adds) is hidden state h_i; blocks never see each other's outputs
// except through the residual stream.
template <class T>
class TransformerLM {
 public:
  struct Block {
    Tensor<T> ln1_gain, ln1_bias, w_qkv, b_qkv, w_proj, b_proj;
    Tensor<T> ln2_gain, ln2_bias, w_fc, b_fc, w_out, b_out;
  };

  struct Output {
    Tensor<T> logits;                // [len × vocab]
    std::vector<Tensor<T>> hidden;   // n_blocks entries, each [len × d_model]
  };

  // Called after block `block` (1-based) with its output; the return value is
  // what flows into the next block and what is reported as that block's
  // hidden state.
  using Injector = std::function<Tensor<T>(std::size_t block, const Tensor<T>& h)>;

  TransformerLM() = default;

  TransformerLM(LMConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, "lm.init"));
    const std::size_t d = config_.d_model, v = config_.vocab_size, f = config_.ff_width();
    auto normal = [&](Shape shape, double stddev) {
      std::vector<T> values(shape_size(shape));
      for (auto& x : values) x = static_cast<T>(normal01(rng) * stddev);
      return Tensor<T>(std::move(shape), std::move(values));
    };
    const double s = 0.02;
    token_embedding_ = normal({v, d}, s);
    position_embedding_ = normal({config_.c_max, d}, s);
    for (std::size_t b = 0; b < config_.n_blocks; ++b) {
      Block blk;
      blk.ln1_gain = Tensor<T>::full({d}, T(1));
      blk.ln1_bias = Tensor<T>::zeros({d});
      blk.w_qkv = normal({d, 3 * d}, s);
      blk.b_qkv = Tensor<T>::zeros({3 * d});
      blk.w_proj = normal({d, d}, s);
      blk.b_proj = Tensor<T>::zeros({d});
      blk.ln2_gain = Tensor<T>::full({d}, T(1));
      blk.ln2_bias = Tensor<T>::zeros({d});
      blk.w_fc = normal({d, f}, s);
      blk.b_fc = Tensor<T>::zeros({f});
      blk.w_out = normal({f, d}, s);
      blk.b_out = Tensor<T>::zeros({d});
      blocks_.push_back(std::move(blk));
    }
    lnf_gain_ = Tensor<T>::full({d}, T(1));
    lnf_bias_ = Tensor<T>::zeros({d});
    unembed_ = normal({d, v}, s);
    unembed_bias_ = Tensor<T>::zeros({v});
  }

  const LMConfig& config() const { return config_; }

  Output forward(std::span<const TokenId> ids, const Injector& inject = {}) const {
    if (ids.empty()) throw ContextError("lm forward needs at least one token");
    if (ids.size() > config_.c_max) {
      throw ContextError("sequence of " + std::to_string(ids.size()) + " tokens exceeds c_max=" +
                         std::to_string(config_.c_max));
    }
    const std::size_t len = ids.size(), d = config_.d_model, heads = config_.n_heads, dh = d / heads;
    Output out;
    Tensor<T> x = add(gather_rows(token_embedding_, ids), slice_rows(position_embedding_, 0, len));
    const T attn_scale = T(1) / std::sqrt(T(dh));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      Tensor<T> a = layer_norm(x, blk.ln1_gain, blk.ln1_bias);
      Tensor<T> qkv = add_row_vector(matmul(a, blk.w_qkv), blk.b_qkv);
      std::vector<Tensor<T>> head_out;
      head_out.reserve(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> q = slice_cols(qkv, h * dh, dh);
        Tensor<T> k = slice_cols(qkv, d + h * dh, dh);
        Tensor<T> v = slice_cols(qkv, 2 * d + h * dh, dh);
        Tensor<T> att = causal_softmax_rows(scale(matmul(q, transpose(k)), attn_scale));
        head_out.push_back(matmul(att, v));
      }
      Tensor<T> merged = heads == 1 ? head_out.front() : concat_cols(head_out);
      x = add(x, add_row_vector(matmul(merged, blk.w_proj), blk.b_proj));
      Tensor<T> m = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
      Tensor<T> ff = gelu(add_row_vector(matmul(m, blk.w_fc), blk.b_fc));
      x = add(x, add_row_vector(matmul(ff, blk.w_out), blk.b_out));
      if (inject) x = inject(b + 1, x);
      out.hidden.push_back(x);
    }
    Tensor<T> final_norm = layer_norm(x, lnf_gain_, lnf_bias_);
    out.logits = add_row_vector(matmul(final_norm, unembed_), unembed_bias_);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> p;
    p.emplace_back("lm.token_embedding", token_embedding_);
    p.emplace_back("lm.position_embedding", position_embedding_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      const std::string pre = "lm.block" + std::to_string(b + 1) + ".";
      p.emplace_back(pre + "ln1_gain", blk.ln1_gain);
      p.emplace_back(pre + "ln1_bias", blk.ln1_bias);
      p.emplace_back(pre + "w_qkv", blk.w_qkv);
      p.emplace_back(pre + "b_qkv", blk.b_qkv);
      p.emplace_back(pre + "w_proj", blk.w_proj);
      p.emplace_back(pre + "b_proj", blk.b_proj);
      p.emplace_back(pre + "ln2_gain", blk.ln2_gain);
      p.emplace_back(pre + "ln2_bias", blk.ln2_bias);
      p.emplace_back(pre + "w_fc", blk.w_fc);
      p.emplace_back(pre + "b_fc", blk.b_fc);
      p.emplace_back(pre + "w_out", blk.w_out);
      p.emplace_back(pre + "b_out", blk.b_out);
    }
    p.emplace_back("lm.lnf_gain", lnf_gain_);
    p.emplace_back("lm.lnf_bias", lnf_bias_);
    p.emplace_back("lm.unembed", unembed_);
    p.emplace_back("lm.unembed_bias", unembed_bias_);
    return p;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.size();
    return n;
  }

  // Parameters plus a "meta.lm_config" record, in NPIW layout.
  std::vector<std::pair<std::string, Tensor<T>>> checkpoint_tensors() const {
    auto p = named_parameters();
    p.emplace(p.begin(), "meta.lm_config", config_tensor());
    return p;
  }

  static TransformerLM from_checkpoint(const NamedTensors& tensors) {
    const auto& meta = find_tensor(tensors, "meta.lm_config");
    if (meta.size() != 7) throw FormatError("meta.lm_config must hold 7 values");
    LMConfig cfg;
    cfg.n_blocks = static_cast<std::size_t>(meta[0]);
    cfg.d_model = static_cast<std::size_t>(meta[1]);
    cfg.n_heads = static_cast<std::size_t>(meta[2]);
    cfg.c_max = static_cast<std::size_t>(meta[3]);
    cfg.vocab_size = static_cast<std::size_t>(meta[4]);
    cfg.d_ff = static_cast<std::size_t>(meta[5]);
    cfg.tokenizer = static_cast<TokenizerKind>(static_cast<int>(meta[6]));
    TransformerLM lm(cfg, 0);
    auto params = lm.named_parameters();
    assign_parameters(params, tensors);
    return lm;
  }

  void save(const std::string& path) const { save_checkpoint(path, checkpoint_tensors()); }
  static TransformerLM load(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

  // SHA-256 over the NPIW encoding of the weights.
  Digest digest() const { return sha256(encode_checkpoint(checkpoint_tensors())); }

  void set_trainable(bool on) {
    for (auto& t : parameters()) {
      t.set_requires_grad(on);
      if (!on) t.node().grad.clear();
    }
  }

  // Marks the weights read-only for downstream use and records their digest.
  void freeze() {
    set_trainable(false);
    frozen_digest_ = digest();
  }
  bool frozen() const { return frozen_digest_.has_value(); }
  const std::optional<Digest>& frozen_digest() const { return frozen_digest_; }

  void verify_frozen() const {
    if (!frozen_digest_) throw DigestError("language model was never frozen");
    if (digest() != *frozen_digest_) throw DigestError("frozen language model weights changed");
  }

  // Independent weight copy (optionally in another precision).
  template <class U = T>
  TransformerLM<U> copy_as() const {
    TransformerLM<U> out(config_, 0);
    auto dst = out.named_parameters();
    auto src = named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto d = dst[i].second.mutable_data();
      auto s = src[i].second.data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<U>(s[k]);
    }
    return out;
  }

  // Direct access for tests that build hand-set weights.
  Block& block(std::size_t i) { return blocks_.at(i); }
  Tensor<T>& token_embedding() { return token_embedding_; }
  Tensor<T>& position_embedding() { return position_embedding_; }
  Tensor<T>& unembed() { return unembed_; }

 private:
  Tensor<T> config_tensor() const {
    return Tensor<T>({7}, {T(config_.n_blocks), T(config_.d_model), T(config_.n_heads), T(config_.c_max),
                           T(config_.vocab_size), T(config_.d_ff), T(static_cast<int>(config_.tokenizer))});
  }

  LMConfig config_;
  Tensor<T> token_embedding_, position_embedding_;
  std::vector<Block> blocks_;
  Tensor<T> lnf_gain_, lnf_bias_, unembed_, unembed_bias_;
  std::optional<Digest> frozen_digest_;
};

// Next-token logits of the last position.
template <class T>
std::vector<T> last_row(const Tensor<T>& logits) {
  const std::size_t r = logits.rows(), c = logits.cols();
  return std::vector<T>(logits.data().begin() + (r - 1) * c, logits.data().end());
}

}  // namespace npi

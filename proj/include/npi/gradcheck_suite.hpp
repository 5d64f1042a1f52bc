#pragma once

#include <vector>

#include "npi/control.hpp"
#include "npi/gradcheck.hpp"
#include "npi/losses.hpp"
#include "npi/nets.hpp"
#include "npi/ops.hpp"
#include "npi/training.hpp"

namespace npi {

inline constexpr double kOpGradTolerance = 1e-3;
inline constexpr double kEndToEndGradTolerance = 1e-2;

namespace detail {

inline Tensor<double> suite_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(derive_seed(seed, "gradcheck"));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace detail

// Central finite-difference checks for every differentiable op, in double
// precision. Each op is wrapped in a random linear readout so that every
// output element contributes to the scalar.
inline std::vector<GradCheckResult> op_gradchecks() {
  using detail::suite_tensor;
  using In = std::vector<Tensor<double>>;
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, In inputs, std::function<Tensor<double>(const In&)> fn) {
    out.push_back(gradcheck<double>(name, std::move(inputs), fn, kOpGradTolerance, 1e-5));
  };
  auto w23 = suite_tensor({2, 3}, 1);
  check("matmul", {suite_tensor({2, 4}, 2), suite_tensor({4, 3}, 3)},
        [=](const In& x) { return sum(mul(matmul(x[0], x[1]), w23)); });
  check("transpose", {suite_tensor({3, 2}, 4)}, [=](const In& x) { return sum(mul(transpose(x[0]), w23)); });
  check("add", {suite_tensor({2, 3}, 5), suite_tensor({2, 3}, 6)},
        [=](const In& x) { return sum(mul(add(x[0], x[1]), w23)); });
  check("sub", {suite_tensor({2, 3}, 7), suite_tensor({2, 3}, 8)},
        [=](const In& x) { return sum(mul(sub(x[0], x[1]), w23)); });
  check("mul", {suite_tensor({2, 3}, 9), suite_tensor({2, 3}, 10)},
        [=](const In& x) { return sum(mul(mul(x[0], x[1]), w23)); });
  check("scale", {suite_tensor({2, 3}, 11)}, [=](const In& x) { return sum(mul(scale(x[0], 1.7), w23)); });
  check("add_row_vector", {suite_tensor({2, 3}, 12), suite_tensor({3}, 13)},
        [=](const In& x) { return sum(mul(add_row_vector(x[0], x[1]), w23)); });
  check("gelu", {suite_tensor({2, 3}, 14)}, [=](const In& x) { return sum(mul(gelu(x[0]), w23)); });
  check("sigmoid", {suite_tensor({2, 3}, 15)}, [=](const In& x) { return sum(mul(sigmoid(x[0]), w23)); });
  check("tanh", {suite_tensor({2, 3}, 16)}, [=](const In& x) { return sum(mul(npi::tanh(x[0]), w23)); });
  // Inputs kept away from the kink at zero.
  check("relu", {suite_tensor({2, 3}, 17, 0.1, 1.0), suite_tensor({2, 3}, 18, -1.0, -0.1)},
        [=](const In& x) { return sum(mul(add(relu(x[0]), relu(x[1])), w23)); });
  auto w38 = suite_tensor({3, 8}, 19);
  check("layer_norm", {suite_tensor({3, 8}, 20), suite_tensor({8}, 21, 0.5, 1.5), suite_tensor({8}, 22)},
        [=](const In& x) { return sum(mul(layer_norm(x[0], x[1], x[2]), w38)); });
  auto w45 = suite_tensor({4, 5}, 23);
  check("softmax_rows", {suite_tensor({4, 5}, 24, -2, 2)},
        [=](const In& x) { return sum(mul(softmax_rows(x[0]), w45)); });
  auto w44 = suite_tensor({4, 4}, 25);
  check("causal_softmax_rows", {suite_tensor({4, 4}, 26, -2, 2)},
        [=](const In& x) { return sum(mul(causal_softmax_rows(x[0]), w44)); });
  check("slice_rows", {suite_tensor({4, 3}, 27)}, [=](const In& x) { return sum(mul(slice_rows(x[0], 1, 2), w23)); });
  check("slice_cols", {suite_tensor({2, 5}, 28)}, [=](const In& x) { return sum(mul(slice_cols(x[0], 2, 3), w23)); });
  auto w25 = suite_tensor({2, 5}, 29);
  check("concat_cols", {suite_tensor({2, 2}, 30), suite_tensor({2, 3}, 31)},
        [=](const In& x) { return sum(mul(concat_cols(std::vector{x[0], x[1]}), w25)); });
  auto w1x10 = suite_tensor({1, 10}, 32);
  check("concat_flat", {suite_tensor({2, 2}, 33), suite_tensor({6}, 34)},
        [=](const In& x) { return sum(mul(concat_flat(std::vector{x[0], x[1]}), w1x10)); });
  check("slice_flat_reshape", {suite_tensor({3, 4}, 35)},
        [=](const In& x) { return sum(mul(reshape(slice_flat(x[0], 3, {6}), {2, 3}), w23)); });
  auto w53 = suite_tensor({5, 3}, 36);
  check("pad_rows", {suite_tensor({2, 3}, 37)}, [=](const In& x) { return sum(mul(pad_rows(x[0], 5), w53)); });
  std::vector<std::uint32_t> ids{2, 0, 2};
  auto w33 = suite_tensor({3, 3}, 38);
  check("gather_rows", {suite_tensor({3, 3}, 39)},
        [=](const In& x) { return sum(mul(gather_rows(x[0], std::span<const std::uint32_t>(ids)), w33)); });
  auto w1x12 = suite_tensor({1, 12}, 40);
  check("segment_scale", {suite_tensor({1, 12}, 41), suite_tensor({3, 1}, 42)},
        [=](const In& x) { return sum(mul(segment_scale(x[0], x[1], 4), w1x12)); });
  check("mean", {suite_tensor({2, 3}, 43)}, [=](const In& x) { return mean(mul(x[0], x[0])); });
  check("weighted_sum", {suite_tensor({1}, 44), suite_tensor({1}, 45)},
        [=](const In& x) { return weighted_sum(std::vector{mul(x[0], x[0]), mul(x[1], x[0])}, {0.3, 1.2}); });
  auto target = suite_tensor({6}, 46, 0.0, 1.0);
  check("bce", {suite_tensor({6}, 47, 0.1, 0.9)}, [=](const In& x) { return bce(x[0], target); });
  auto y = suite_tensor({2, 3}, 48);
  check("mse", {suite_tensor({2, 3}, 49)}, [=](const In& x) { return mse(x[0], y); });
  std::vector<std::uint32_t> cls{3, 0, 4};
  check("cross_entropy", {suite_tensor({3, 5}, 50, -2, 2)},
        [=](const In& x) { return cross_entropy(x[0], std::span<const std::uint32_t>(cls)); });

  // A whole transformer forward pass, checked on a sample of its parameters.
  LMConfig lc{.n_blocks = 2, .d_model = 8, .n_heads = 2, .c_max = 6, .vocab_size = 11};
  TransformerLM<double> lm(lc, 51);
  const Tokens seq{2, 5, 7, 3, 9, 4};
  out.push_back(gradcheck<double>(
      "lm_forward", lm.parameters(),
      [&](const In&) {
        auto res = lm.forward(std::span<const TokenId>(seq).first(5));
        return cross_entropy(res.logits, std::span<const TokenId>(seq).subspan(1));
      },
      kOpGradTolerance, 1e-5, 6));
  return out;
}

// E_X through a w=3 controlled rollout of a 2-block, d_model=16 model,
// differentiated with respect to the NPI's own weights.
inline GradCheckResult end_to_end_gradcheck(std::uint64_t seed = 5) {
  LMConfig lc{.n_blocks = 2, .d_model = 16, .n_heads = 2, .c_max = 8, .vocab_size = 20};
  TransformerLM<double> lm(lc, seed);
  lm.freeze();
  ControlConfig c{.taps = {1, 2}, .w = 3, .c_max = 8};
  const std::size_t n = c.flat_size(16);
  NPINetwork<double> x(c, 16, NetConfig{.hidden = {8}, .output_gain = 0.2}, seed + 1);
  Rng rng(derive_seed(seed, "e2e.init"));
  for (auto p : x.parameters())
    for (auto& v : p.mutable_data()) v = 0.05 * normal01(rng);
  auto gains = x.gains();
  for (auto& g : gains.mutable_data()) g = 0.2;
  auto y = make_classifier<double>(n, NetConfig{.hidden = {8}}, seed + 2);
  auto z = make_discriminator<double>(n, NetConfig{.hidden = {8}}, seed + 3);
  TrainingConfig cfg;
  const Tokens ctx{3, 4, 5, 6};
  return gradcheck<double>(
      "end_to_end_e_x", x.parameters(),
      [&](const std::vector<Tensor<double>>&) {
        auto run = controlled_generate(lm, ctx, x.as_function(), c, SamplerConfig{});
        return compute_npi_loss(run.S_flat(), run.S_prime_flat(), y, z, cfg).total;
      },
      kEndToEndGradTolerance, 1e-5, 24);
}

}  // namespace npi

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "npi/adam.hpp"
#include "npi/control.hpp"
#include "npi/datagen.hpp"
#include "npi/losses.hpp"
#include "npi/metrics.hpp"
#include "npi/nets.hpp"
#include "npi/vocab.hpp"

namespace npi {

// ---------------------------------------------------------------- classifier

struct ClassifierTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 32;
  AdamConfig adam{.lr = 1e-3};
  double holdout = 0.1;
  double gate = 0.85;
  std::uint64_t seed = 0;
};

struct ClassifierReport {
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
  std::size_t train_size = 0;
  std::size_t holdout_size = 0;
  std::vector<double> epoch_losses;
};

template <class T>
double classifier_accuracy(const ProbabilityNetwork<T>& net, const std::vector<Tensor<T>>& inputs,
                           const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  NoGradGuard<T> no_grad;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < idx.size(); start += 256) {
    std::vector<Tensor<T>> rows;
    const std::size_t end = std::min(idx.size(), start + 256);
    for (std::size_t k = start; k < end; ++k) rows.push_back(inputs[idx[k]]);
    auto p = net.forward(stack_rows(rows));
    for (std::size_t k = start; k < end; ++k) hits += (p[k - start] >= T(0.5)) == (labels[idx[k]] == 1);
  }
  return double(hits) / double(idx.size());
}

// Minimises BCE(Y(S_j), L_j) on a seeded split, then checks held-out
// accuracy against the gate.
template <class T>
ClassifierReport pretrain_classifier(ProbabilityNetwork<T>& net, const std::vector<Tensor<T>>& inputs,
                                     const std::vector<int>& labels, const ClassifierTrainConfig& cfg) {
  if (inputs.size() != labels.size()) throw DataError("classifier inputs and labels differ in count");
  if (inputs.size() < 2) throw DataError("classifier needs at least two examples");
  if (!(cfg.holdout >= 0.1 && cfg.holdout < 1.0)) throw ConfigError("holdout fraction must be in [0.1, 1)");
  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, "classifier.split"));
  shuffle(order.begin(), order.end(), rng);
  const std::size_t n_hold = std::max<std::size_t>(1, std::size_t(std::ceil(cfg.holdout * double(order.size()))));
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());

  net.set_trainable(true);
  auto params = net.parameters();
  AdamState<T> adam(cfg.adam);
  ClassifierReport report;
  report.train_size = train.size();
  report.holdout_size = hold.size();
  Tape<T>::current().clear();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(train.begin(), train.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch) {
      const std::size_t end = std::min(train.size(), start + cfg.batch);
      std::vector<Tensor<T>> rows;
      std::vector<T> target;
      for (std::size_t k = start; k < end; ++k) {
        rows.push_back(inputs[train[k]]);
        target.push_back(T(labels[train[k]]));
      }
      auto loss = bce(net.forward(stack_rows(rows)), Tensor<T>({rows.size(), 1}, std::move(target)));
      total += double(loss.item());
      ++batches;
      backward(loss);
      adam_step<T>(params, adam);
    }
    report.epoch_losses.push_back(batches ? total / double(batches) : 0.0);
  }
  net.set_trainable(false);
  report.train_accuracy = classifier_accuracy(net, inputs, labels, train);
  report.holdout_accuracy = classifier_accuracy(net, inputs, labels, hold);
  if (report.holdout_accuracy < cfg.gate) {
    throw GateError("classifier held-out accuracy " + std::to_string(report.holdout_accuracy) + " is below the gate " +
                    std::to_string(cfg.gate) + " (train accuracy " + std::to_string(report.train_accuracy) + ", " +
                    std::to_string(report.holdout_size) + " held-out examples, " + std::to_string(cfg.epochs) +
                    " epochs)");
  }
  return report;
}

inline ClassifierReport pretrain_classifier(ProbabilityNetwork<float>& net, const Dataset& ds,
                                            const ClassifierTrainConfig& cfg) {
  std::vector<Tensor<float>> inputs;
  std::vector<int> labels;
  for (const auto& e : ds.examples) {
    inputs.push_back(e.S);
    labels.push_back(e.label);
  }
  return pretrain_classifier(net, inputs, labels, cfg);
}

// --------------------------------------------------------------- adversarial

struct TrainingConfig {
  double alpha = 1.0;   // content
  double beta = 0.5;    // stability
  double gamma = 0.25;  // fluency
  int l_target = 1;
  AdamConfig x_adam{.lr = 1e-4};
  AdamConfig y_adam{.lr = 1e-4};
  AdamConfig z_adam{.lr = 1e-4};
  std::size_t batch = 8;
  std::size_t epochs = 5;
  bool y_refresh = false;
  std::size_t y_refresh_every = 4;
  std::size_t z_steps = 1;  // Z updates per X update
  double y_gate = 0.85;
  double clip_norm = 1.0;   // 0 disables clipping of X's gradient
  SamplerConfig sampler{};
  std::uint64_t seed = 0;

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("loss weights must be non-negative");
    if (alpha == 0 && beta == 0 && gamma == 0) throw ConfigError("at least one loss weight must be positive");
    if (l_target != 0 && l_target != 1) throw ConfigError("l_target must be 0 or 1");
    if (batch == 0) throw ConfigError("batch size must be positive");
    if (y_refresh && y_refresh_every == 0) throw ConfigError("y_refresh_every must be positive");
  }
};

// Flips the content target from inducing the behavior to avoiding it.
inline TrainingConfig avoidance_mode(TrainingConfig cfg) {
  cfg.l_target = 0;
  return cfg;
}

struct LossBreakdown {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double e_x_total = 0, e_x_fluency = 0, e_x_content = 0, e_x_stability = 0;
  double e_z = 0, e_y = 0;
  bool y_refreshed = false;
  double grad_norm_x = 0, grad_norm_z = 0;
  double mean_d_norm = 0;
  double target_rate = 0;  // fraction of rollouts whose perturbed window is labeled 1
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"step", l.step},
          {"epoch", l.epoch},
          {"e_x_total", l.e_x_total},
          {"e_x_fluency", l.e_x_fluency},
          {"e_x_content", l.e_x_content},
          {"e_x_stability", l.e_x_stability},
          {"e_z", l.e_z},
          {"e_y", l.e_y},
          {"y_refreshed", l.y_refreshed},
          {"grad_norm_x", l.grad_norm_x},
          {"grad_norm_z", l.grad_norm_z},
          {"mean_d_norm", l.mean_d_norm},
          {"target_rate", l.target_rate}};
}

template <class T>
struct NpiLoss {
  Tensor<T> total;
  double fluency = 0, content = 0, stability = 0;
};

// E_X = γ·BCE(Z(S'), 0) + α·BCE(Y(S'), l_target) + β·MSE(S', S). Y and Z
// should be non-trainable so gradients reach only X.
template <class T>
NpiLoss<T> compute_npi_loss(const Tensor<T>& S, const Tensor<T>& S_prime, const ProbabilityNetwork<T>& Y,
                            const ProbabilityNetwork<T>& Z, const TrainingConfig& cfg) {
  if (S.shape() != S_prime.shape()) {
    throw ContractError("S and S' differ in shape: " + shape_str(S.shape()) + " vs " + shape_str(S_prime.shape()));
  }
  auto fluency = bce(Z.forward(S_prime), T(0));
  auto content = bce(Y.forward(S_prime), T(cfg.l_target));
  auto stability = mse(S_prime, S.detach());
  NpiLoss<T> out;
  out.fluency = double(fluency.item());
  out.content = double(content.item());
  out.stability = double(stability.item());
  out.total = add(add(scale(fluency, T(cfg.gamma)), scale(content, T(cfg.alpha))), scale(stability, T(cfg.beta)));
  return out;
}

// One Adam step on Z for E_Z = BCE(Z(S), 0) + BCE(Z(S'), 1) over the batch.
template <class T>
double discriminator_step(ProbabilityNetwork<T>& Z, const std::vector<Tensor<T>>& S,
                          const std::vector<Tensor<T>>& S_prime, AdamState<T>& adam, double* grad_norm_out = nullptr) {
  if (S.size() != S_prime.size() || S.empty()) throw PairingError("discriminator batch needs matching S and S'");
  Z.set_trainable(true);
  auto params = Z.parameters();
  auto loss = add(bce(Z.forward(stack_rows(S)), T(0)), bce(Z.forward(stack_rows(S_prime)), T(1)));
  const double value = double(loss.item());
  backward(loss);
  if (grad_norm_out) *grad_norm_out = grad_norm<T>(std::span<const Tensor<T>>(params));
  adam_step<T>(params, adam);
  Z.set_trainable(false);
  return value;
}

// One Adam step on Y with labels recomputed by the metric on the perturbed
// window texts: E'_Y = BCE(Y(S'), L').
template <class T>
double refresh_classifier(ProbabilityNetwork<T>& Y, const std::vector<Tensor<T>>& S_prime,
                          const std::vector<std::string>& texts, const TargetMetric& metric, AdamState<T>& adam,
                          std::vector<int>* labels_out = nullptr) {
  if (S_prime.size() != texts.size() || texts.empty()) throw PairingError("refresh batch needs one text per S'");
  std::vector<T> labels;
  for (const auto& t : texts) labels.push_back(T(metric.label(t)));
  if (labels_out) labels_out->assign(labels.begin(), labels.end());
  Y.set_trainable(true);
  auto params = Y.parameters();
  auto loss = bce(Y.forward(stack_rows(S_prime)), Tensor<T>({labels.size(), 1}, labels));
  const double value = double(loss.item());
  backward(loss);
  adam_step<T>(params, adam);
  Y.set_trainable(false);
  return value;
}

template <class T>
struct TrainingHooks {
  std::function<void(const LossBreakdown&)> on_step;
  // Called after every epoch; a natural place to write checkpoints.
  std::function<void(std::size_t epoch, const NPINetwork<T>& X, const ProbabilityNetwork<T>& Y,
                     const ProbabilityNetwork<T>& Z)>
      on_epoch;
};

struct TrainingLog {
  std::vector<LossBreakdown> steps;
  std::vector<double> epoch_mean_d_norm;
  std::vector<double> epoch_content;
  std::vector<double> epoch_target_rate;
};

namespace detail {

template <class T>
std::vector<std::vector<T>> snapshot(const std::vector<Tensor<T>>& params) {
  std::vector<std::vector<T>> s;
  for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

template <class T>
void restore(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(s[i].begin(), s[i].end(), params[i].mutable_data().begin());
}

template <class T>
double l2(const Tensor<T>& t) {
  double s = 0;
  for (T v : t.data()) s += double(v) * double(v);
  return std::sqrt(s);
}

}  // namespace detail

// Adversarial training of X against Z, guided by the pretrained classifier Y.
// Each batch: no-grad rollouts from the stored inputs, Z step(s) on the
// detached (S, S') pairs, then one X step on E_X through fresh rollouts, and
// an optional Y refresh. A non-finite loss restores X, Y and Z to their last
// good epoch and throws TrainingAborted.
template <class T>
TrainingLog train_adversarial(NPINetwork<T>& X, ProbabilityNetwork<T>& Y, ProbabilityNetwork<T>& Z,
                              const std::vector<Tokens>& inputs, const TransformerLM<T>& lm, const Vocabulary& vocab,
                              const TargetMetric& metric, const ClassifierReport& y_report,
                              const TrainingConfig& cfg, const TrainingHooks<T>& hooks = {}) {
  cfg.validate();
  if (y_report.holdout_accuracy < cfg.y_gate) {
    throw GateError("content classifier accuracy " + std::to_string(y_report.holdout_accuracy) +
                    " has not passed the gate " + std::to_string(cfg.y_gate));
  }
  if (inputs.empty()) throw DataError("no training inputs");
  const auto& control = X.control();
  control.validate(lm.config());
  if (lm.frozen()) lm.verify_frozen();

  AdamState<T> x_adam(cfg.x_adam), y_adam(cfg.y_adam), z_adam(cfg.z_adam);
  auto x_params = X.parameters();
  auto y_params = Y.parameters();
  auto z_params = Z.parameters();
  auto good_x = detail::snapshot(x_params), good_y = detail::snapshot(y_params), good_z = detail::snapshot(z_params);
  X.set_trainable(false);
  Y.set_trainable(false);
  Z.set_trainable(false);
  Tape<T>::current().clear();

  TrainingLog log;
  Rng rng(derive_seed(cfg.seed, "train.order"));
  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    double d_sum = 0, content_sum = 0, rate_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const std::size_t b = end - start;
      LossBreakdown row;
      row.step = step;
      row.epoch = epoch;
      try {
        auto sampler_for = [&](std::size_t k) {
          SamplerConfig s = cfg.sampler;
          s.seed = derive_seed(cfg.seed, "rollout." + std::to_string(step) + "." + std::to_string(k));
          return s;
        };
        // 1. rollouts without gradient
        std::vector<Tensor<T>> S, Sp;
        std::vector<std::string> texts;
        std::size_t hits = 0;
        {
          NoGradGuard<T> no_grad;
          auto fn = X.as_function();
          for (std::size_t k = start; k < end; ++k) {
            auto run = controlled_generate(lm, inputs[order[k]], fn, control, sampler_for(k));
            S.push_back(run.S_flat());
            Sp.push_back(run.S_prime_flat());
            texts.push_back(vocab.detokenize(run.tokens));
            hits += metric.label(texts.back()) == 1;
            row.mean_d_norm += detail::l2(run.D) / double(b);
          }
        }
        row.target_rate = double(hits) / double(b);
        // 2. discriminator
        for (std::size_t z = 0; z < cfg.z_steps; ++z) row.e_z = discriminator_step(Z, S, Sp, z_adam, &row.grad_norm_z);
        // 3. NPI step through fresh differentiable rollouts
        X.set_trainable(true);
        X.zero_grad();
        auto fn = X.as_function();
        for (std::size_t k = start; k < end; ++k) {
          auto run = controlled_generate(lm, inputs[order[k]], fn, control, sampler_for(k));
          auto loss = compute_npi_loss(run.S_flat(), run.S_prime_flat(), Y, Z, cfg);
          row.e_x_fluency += loss.fluency / double(b);
          row.e_x_content += loss.content / double(b);
          row.e_x_stability += loss.stability / double(b);
          row.e_x_total += double(loss.total.item()) / double(b);
          backward(scale(loss.total, T(1.0 / double(b))));
        }
        row.grad_norm_x = cfg.clip_norm > 0 ? clip_grad_norm<T>(x_params, cfg.clip_norm)
                                            : grad_norm<T>(std::span<const Tensor<T>>(x_params));
        adam_step<T>(x_params, x_adam);
        X.set_trainable(false);
        // 4. optional classifier refresh
        if (cfg.y_refresh && (step + 1) % cfg.y_refresh_every == 0) {
          row.e_y = refresh_classifier(Y, Sp, texts, metric, y_adam);
          row.y_refreshed = true;
        }
        for (double v : {row.e_x_total, row.e_z, row.e_y, row.grad_norm_x})
          if (!std::isfinite(v)) throw NumericError("non-finite loss at step " + std::to_string(step));
      } catch (const NumericError& e) {
        Tape<T>::current().clear();
        detail::restore(x_params, good_x);
        detail::restore(y_params, good_y);
        detail::restore(z_params, good_z);
        X.set_trainable(false);
        Y.set_trainable(false);
        Z.set_trainable(false);
        throw TrainingAborted(std::string(e.what()) + "; networks restored to the end of epoch " +
                              (epoch == 0 ? std::string("0 (initial weights)") : std::to_string(epoch)));
      }
      d_sum += row.mean_d_norm;
      content_sum += row.e_x_content;
      rate_sum += row.target_rate;
      ++batches;
      log.steps.push_back(row);
      if (hooks.on_step) hooks.on_step(row);
    }
    log.epoch_mean_d_norm.push_back(d_sum / double(batches));
    log.epoch_content.push_back(content_sum / double(batches));
    log.epoch_target_rate.push_back(rate_sum / double(batches));
    good_x = detail::snapshot(x_params);
    good_y = detail::snapshot(y_params);
    good_z = detail::snapshot(z_params);
    if (hooks.on_epoch) hooks.on_epoch(epoch, X, Y, Z);
  }
  if (lm.frozen()) lm.verify_frozen();
  return log;
}

inline std::vector<Tokens> dataset_inputs(const Dataset& ds) {
  std::vector<Tokens> out;
  for (const auto& e : ds.examples) out.push_back(e.input);
  return out;
}

}  // namespace npi

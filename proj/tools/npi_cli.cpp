#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "npi/npi.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace npi;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitGate = 3;

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

// Per-command flag that is sugar for one config key.
struct KeyFlag {
  std::string flag, key, help;
};

struct CommandSpec {
  std::string name, help;
  std::vector<KeyFlag> flags;
};

// Everything a command needs: the resolved configuration, where to write, and
// the provenance it accumulates on the way.
class Run {
 public:
  Run(std::string command, Config cfg, std::uint64_t seed, bool deterministic, std::size_t jobs)
      : command_(std::move(command)), cfg_(std::move(cfg)), seed_(seed), deterministic_(deterministic), jobs_(jobs) {}

  const Config& cfg() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t jobs() const { return deterministic_ ? 1 : jobs_; }

  const fs::path& dir() {
    if (dir_.empty()) {
      const char* root = std::getenv("NPI_RUN_DIR");
      const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
      std::time_t now = std::time(nullptr);
      std::tm tm{};
      gmtime_r(&now, &tm);
      char stamp[32];
      std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
      const std::string name = command_ + "-" + stamp + "-seed" + std::to_string(seed_);
      fs::path candidate = base / name;
      for (int i = 1; fs::exists(candidate); ++i) candidate = base / (name + "-" + std::to_string(i));
      fs::create_directories(candidate);
      dir_ = candidate;
    }
    return dir_;
  }

  // Reads an input artifact and records its digest.
  std::string input(const std::string& role, const std::string& path) {
    if (!fs::exists(path)) throw DataError(role + " file not found: " + path);
    std::string bytes = read_file(path);
    inputs_[role] = {{"path", path}, {"sha256", file_digest_hex(bytes)}};
    return bytes;
  }

  std::string output(const std::string& name, std::string_view bytes) {
    const auto path = (dir() / name).string();
    write_file(path, bytes);
    outputs_[name] = file_digest_hex(std::string(bytes));
    return path;
  }

  std::string output_json(const std::string& name, json j) {
    j["inputs"] = inputs_;
    return output(name, j.dump(2) + "\n");
  }

  void note(const std::string& key, json value) { notes_[key] = std::move(value); }

  json finish() {
    json log = {{"command", command_},
                {"seed", seed_},
                {"deterministic", deterministic_},
                {"jobs", jobs()},
                {"config", cfg_.to_json()},
                {"ignored_keys", cfg_.unused()},
                {"inputs", inputs_},
                {"outputs", outputs_},
                {"results", notes_}};
    write_file((dir() / "run_log.json").string(), log.dump(2) + "\n");
    return {{"run_dir", dir().string()}, {"outputs", outputs_}, {"results", notes_}};
  }

 private:
  std::string command_;
  Config cfg_;
  std::uint64_t seed_;
  bool deterministic_;
  std::size_t jobs_;
  fs::path dir_;
  json inputs_ = json::object(), outputs_ = json::object(), notes_ = json::object();
};

// ----------------------------------------------------------------- helpers

std::vector<std::size_t> sizes(const Config& c, const std::string& key, std::vector<std::size_t> fallback) {
  return c.numbers<std::size_t>(key, fallback);
}

TokenizerKind tokenizer_kind(const std::string& s) {
  if (s == "word") return TokenizerKind::word;
  if (s == "character" || s == "char") return TokenizerKind::character;
  throw ConfigError("unknown tokenizer \"" + s + "\" (expected word or character)");
}

TargetMetric metric_from(const Config& c) {
  const auto kind = c.get("metric.kind", "word_presence");
  const bool polarity = c.flag("metric.polarity", true);
  if (kind == "word_presence") return TargetMetric::word_presence(c.list("metric.words", {"cat"}), polarity);
  if (kind == "word_list") return TargetMetric::word_list(c.list("metric.words", {}), polarity);
  if (kind == "avg_word_length")
    return TargetMetric::avg_word_length(c.number<float>("metric.threshold", 4.0f), polarity);
  throw ConfigError("unknown metric.kind \"" + kind + "\"");
}

ControlConfig control_from(const Config& c, const LMConfig& lm) {
  ControlConfig cc;
  cc.taps = sizes(c, "control.taps", {1, 2});
  cc.w = c.number<std::size_t>("control.w", 6);
  cc.c_max = lm.c_max;
  cc.teacher_force = c.flag("control.teacher_force", false);
  cc.validate(lm);
  return cc;
}

SamplerConfig sampler_from(const Config& c) {
  SamplerConfig s;
  s.top_k = c.number<std::size_t>("sampler.top_k", 1);
  if (c.has("sampler.top_p")) s.top_p = c.number<double>("sampler.top_p", 1.0);
  return s;
}

struct LoadedLM {
  TransformerLM<float> lm;
  Vocabulary vocab;
};

// A model directory holds model.npiw and the vocab.txt it was trained with.
LoadedLM load_lm(Run& run, const std::string& model_key, const std::string& role) {
  const auto path = run.cfg().require(model_key);
  auto lm = TransformerLM<float>::from_checkpoint(decode_checkpoint(run.input(role, path)));
  lm.freeze();
  const auto vocab_key = model_key + "_vocab";
  const auto vocab_path = run.cfg().get(vocab_key, (fs::path(path).parent_path() / "vocab.txt").string());
  auto vocab = Vocabulary::deserialize(run.input(role + "_vocab", vocab_path), lm.config().tokenizer);
  if (vocab.size() != lm.config().vocab_size)
    throw DataError("vocabulary at " + vocab_path + " has " + std::to_string(vocab.size()) + " tokens, model expects " +
                    std::to_string(lm.config().vocab_size));
  return {std::move(lm), std::move(vocab)};
}

LMTrainConfig lm_train_from(const Config& c, const std::string& section, LMTrainConfig d, std::uint64_t seed) {
  d.steps = c.number<std::size_t>(section + ".steps", d.steps);
  d.batch = c.number<std::size_t>(section + ".batch", d.batch);
  d.adam.lr = c.number<double>(section + ".lr", d.adam.lr);
  d.seed = seed;
  return d;
}

std::vector<Tokens> contexts_from(Run& run, const Vocabulary& vocab, const std::string& corpus_key,
                                  const std::string& section, std::size_t count_default, const std::string& stream) {
  const auto text = run.input(corpus_key, run.cfg().require("paths." + corpus_key));
  const auto tokens = vocab.tokenize(text);
  const auto count = run.cfg().number<std::size_t>(section + ".contexts", count_default);
  const auto length = run.cfg().number<std::size_t>(section + ".context_len", 10);
  Rng rng(derive_seed(run.seed(), stream));
  return sample_contexts(tokens, count, length, rng);
}

// ---------------------------------------------------------------- commands

void cmd_synth_corpus(Run& run) {
  const auto& c = run.cfg();
  SyntheticCorpusConfig sc;
  sc.sentences = c.number<std::size_t>("corpus.sentences", sc.sentences);
  sc.target = c.get("corpus.target", sc.target);
  sc.target_rate = c.number<double>("corpus.target_rate", sc.target_rate);
  sc.switch_rate = c.number<double>("corpus.switch_rate", sc.switch_rate);
  sc.seed = derive_seed(run.seed(), "synth-corpus");
  run.output("corpus.txt", synthetic_corpus(sc));
}

void cmd_pretrain_lm(Run& run) {
  const auto& c = run.cfg();
  const auto text = run.input("corpus", c.require("paths.corpus"));
  const auto kind = tokenizer_kind(c.get("lm.tokenizer", "word"));
  const auto vocab = Vocabulary::build(text, kind);
  LMConfig lc;
  lc.n_blocks = c.number<std::size_t>("lm.n_blocks", 2);
  lc.d_model = c.number<std::size_t>("lm.d_model", 32);
  lc.n_heads = c.number<std::size_t>("lm.n_heads", 2);
  lc.c_max = c.number<std::size_t>("lm.c_max", 24);
  lc.d_ff = c.number<std::size_t>("lm.d_ff", 0);
  lc.vocab_size = vocab.size();
  lc.tokenizer = kind;
  lc.validate();
  LMTrainResult curve;
  const auto tokens = vocab.tokenize(text);
  auto lm = pretrain(tokens, lc, lm_train_from(c, "train", {.steps = 3000}, derive_seed(run.seed(), "pretrain")),
                     &curve);
  run.output("model.npiw", encode_checkpoint(lm.checkpoint_tensors()));
  run.output("vocab.txt", vocab.serialize());
  run.note("vocab_size", vocab.size());
  run.note("lm_digest", to_hex(lm.digest()));
  run.note("loss_first", curve.losses.empty() ? 0.0 : curve.losses.front());
  run.note("loss_last", curve.losses.empty() ? 0.0 : curve.losses.back());
  run.note("next_token_accuracy", next_token_accuracy(lm, std::span<const TokenId>(tokens).first(
                                                              std::min<std::size_t>(tokens.size(), 20000))));
}

void cmd_finetune_lm(Run& run) {
  const auto& c = run.cfg();
  auto base = load_lm(run, "paths.lm", "lm");
  const auto before = base.lm.digest();
  const auto text = run.input("corpus", c.require("paths.corpus"));
  const auto tokens = base.vocab.tokenize(text);
  auto tuned = fine_tune(base.lm, tokens,
                         lm_train_from(c, "finetune", {.steps = 500, .adam = {.lr = 1e-3}},
                                       derive_seed(run.seed(), "finetune")));
  if (base.lm.digest() != before) throw DigestError("fine-tuning modified the base model");
  run.output("model.npiw", encode_checkpoint(tuned.checkpoint_tensors()));
  run.output("vocab.txt", base.vocab.serialize());
  run.note("base_digest", to_hex(before));
  run.note("tuned_digest", to_hex(tuned.digest()));
}

void cmd_datagen(Run& run) {
  const auto& c = run.cfg();
  auto [lm, vocab] = load_lm(run, "paths.lm", "lm");
  const auto metric = metric_from(c);
  DatagenConfig dg;
  dg.harvest.control = control_from(c, lm.config());
  dg.harvest.sampler = sampler_from(c);
  dg.n_target = c.number<std::size_t>("datagen.n", 1000);
  dg.balance_tolerance = c.number<double>("datagen.tolerance", dg.balance_tolerance);
  dg.inject_rate = c.number<double>("datagen.inject_rate", 0.9);
  std::string inject;
  for (const auto& w : metric.words) inject += (inject.empty() ? "" : " ") + w;
  inject = c.get("datagen.inject", inject);
  if (!inject.empty()) {
    dg.inject_tokens = vocab.tokenize(inject);
    for (TokenId t : dg.inject_tokens)
      if (t == Vocabulary::kUnk) throw ConfigError("injection text \"" + inject + "\" is not in the vocabulary");
  }
  dg.seed = derive_seed(run.seed(), "datagen");
  const auto contexts = contexts_from(run, vocab, "corpus", "datagen", 8000, "datagen.contexts");
  auto ds = build_dataset(lm, vocab, contexts, metric, dg);
  run.output("dataset.npiq", encode_dataset(ds));
  run.note("examples", ds.examples.size());
  run.note("positive", ds.count(1));
  run.note("partial", ds.partial);
  run.note("audit", audit_dataset(ds));
}

constexpr const char* kAccuracyTensor = "classifier.meta.holdout_accuracy";

void cmd_train_classifier(Run& run) {
  const auto& c = run.cfg();
  const auto ds = decode_dataset(run.input("dataset", c.require("paths.dataset")));
  if (ds.examples.empty()) throw DataError("dataset has no examples");
  auto y = make_classifier<float>(ds.flat_size(), NetConfig{.hidden = sizes(c, "y.hidden", {512, 512})},
                                  derive_seed(run.seed(), "y"));
  ClassifierTrainConfig tc;
  tc.epochs = c.number<std::size_t>("y.epochs", 20);
  tc.batch = c.number<std::size_t>("y.batch", 32);
  tc.adam.lr = c.number<double>("y.lr", 1e-3);
  tc.seed = derive_seed(run.seed(), "y.train");
  tc.holdout = c.number<double>("y.holdout", tc.holdout);
  tc.gate = c.number<double>("y.gate", tc.gate);
  const auto report = pretrain_classifier(y, ds, tc);
  auto tensors = checkpoint_tensors(y);
  tensors.emplace_back(kAccuracyTensor, Tensor<float>({1}, {float(report.holdout_accuracy)}));
  run.output("y.npiw", encode_checkpoint(tensors));
  run.output_json("classifier_report.json", {{"train_accuracy", report.train_accuracy},
                                             {"holdout_accuracy", report.holdout_accuracy},
                                             {"train_size", report.train_size},
                                             {"holdout_size", report.holdout_size},
                                             {"gate", tc.gate},
                                             {"epoch_losses", report.epoch_losses}});
  run.note("holdout_accuracy", report.holdout_accuracy);
}

TrainingConfig training_from(const Config& c, std::uint64_t seed) {
  TrainingConfig t;
  t.alpha = c.number<double>("train.alpha", t.alpha);
  t.beta = c.number<double>("train.beta", t.beta);
  t.gamma = c.number<double>("train.gamma", t.gamma);
  t.x_adam.lr = c.number<double>("train.x_lr", 1e-3);
  t.y_adam.lr = c.number<double>("train.y_lr", t.y_adam.lr);
  t.z_adam.lr = c.number<double>("train.z_lr", t.z_adam.lr);
  t.batch = c.number<std::size_t>("train.batch", 16);
  t.epochs = c.number<std::size_t>("train.epochs", t.epochs);
  t.y_refresh = c.flag("train.y_refresh", true);
  t.y_refresh_every = c.number<std::size_t>("train.y_refresh_every", 1);
  t.z_steps = c.number<std::size_t>("train.z_steps", t.z_steps);
  t.y_gate = c.number<double>("train.y_gate", t.y_gate);
  t.clip_norm = c.number<double>("train.clip_norm", t.clip_norm);
  t.sampler = sampler_from(c);
  t.seed = derive_seed(seed, "train");
  const auto mode = c.get("train.mode", "induce");
  if (mode == "avoid") t = avoidance_mode(t);
  else if (mode != "induce") throw ConfigError("train.mode must be induce or avoid");
  t.validate();
  return t;
}

void cmd_train_npi(Run& run) {
  const auto& c = run.cfg();
  if (!c.has("paths.y")) throw GateError("no content classifier checkpoint given (paths.y / --y)");
  const auto y_path = c.require("paths.y");
  if (!fs::exists(y_path)) throw GateError("content classifier checkpoint not found: " + y_path);
  const auto y_tensors = decode_checkpoint(run.input("y", y_path));
  if (!has_tensor(y_tensors, kAccuracyTensor))
    throw GateError("classifier checkpoint carries no held-out accuracy; retrain it with train-classifier");
  ClassifierReport y_report;
  y_report.holdout_accuracy = double(find_tensor(y_tensors, kAccuracyTensor)[0]);
  auto y = probability_from_checkpoint(y_tensors, NetKind::classifier);

  auto [lm, vocab] = load_lm(run, "paths.lm", "lm");
  const auto ds = decode_dataset(run.input("dataset", c.require("paths.dataset")));
  if (ds.lm_digest != *lm.frozen_digest()) throw DigestError("dataset was harvested from a different language model");
  if (y.input_size() != ds.flat_size()) throw DimensionError("classifier input size does not match the dataset");
  const auto tc = training_from(c, run.seed());

  NPINetwork<float> x(ds.control, ds.d_model,
                      NetConfig{.hidden = sizes(c, "x.hidden", {512, 512}), .output_gain = c.number<double>("x.gain", 1.0)},
                      derive_seed(run.seed(), "x"));
  auto z = make_discriminator<float>(ds.flat_size(), NetConfig{.hidden = sizes(c, "z.hidden", {512, 512})},
                                     derive_seed(run.seed(), "z"));
  std::string rows;
  TrainingHooks<float> hooks;
  hooks.on_step = [&](const LossBreakdown& row) { rows += to_json(row).dump() + "\n"; };
  const auto log = train_adversarial(x, y, z, dataset_inputs(ds), lm, vocab, ds.metric, y_report, tc, hooks);
  run.output("x.npiw", encode_checkpoint(checkpoint_tensors(x)));
  run.output("z.npiw", encode_checkpoint(checkpoint_tensors(z)));
  auto y_out = checkpoint_tensors(y);
  y_out.emplace_back(kAccuracyTensor, Tensor<float>({1}, {float(y_report.holdout_accuracy)}));
  run.output("y_final.npiw", encode_checkpoint(y_out));
  run.output("training_log.jsonl", rows);
  run.output_json("training_summary.json", {{"epoch_mean_d_norm", log.epoch_mean_d_norm},
                                            {"epoch_content", log.epoch_content},
                                            {"epoch_target_rate", log.epoch_target_rate},
                                            {"steps", log.steps.size()}});
  run.note("epoch_target_rate", log.epoch_target_rate);
}

NPINetwork<float> load_npi(Run& run, const LMConfig& lm) {
  auto x = npi_from_checkpoint(decode_checkpoint(run.input("npi", run.cfg().require("paths.npi"))));
  if (x.d_model() != lm.d_model) throw DimensionError("NPI was trained for a different d_model");
  x.control().validate(lm);
  return x;
}

void cmd_generate(Run& run) {
  const auto& c = run.cfg();
  auto [lm, vocab] = load_lm(run, "paths.lm", "lm");
  const auto prompt = c.require("generate.prompt");
  const auto ctx = vocab.tokenize(prompt);
  if (ctx.empty()) throw DataError("empty prompt");
  auto sampler = sampler_from(c);
  sampler.seed = derive_seed(run.seed(), "generate");
  std::optional<NPINetwork<float>> x;
  if (c.has("paths.npi")) x = load_npi(run, lm.config());
  const auto control = x ? x->control() : control_from(c, lm.config());
  const auto steps = c.number<std::size_t>("generate.steps", control.w);
  const auto original = vocab.detokenize(windowed_generate(lm, ctx, control.w, sampler, steps));
  json out = {{"prompt", prompt}, {"original", original}};
  if (x) {
    NoGradGuard<float> no_grad;
    out["controlled"] = vocab.detokenize(controlled_continue(lm, ctx, x->as_function(), control, sampler, steps));
  }
  run.output_json("generation.json", out);
  run.note("original", original);
  if (x) run.note("controlled", out["controlled"]);
}

struct EvalSetup {
  LoadedLM base;
  TargetMetric metric;
  EmbeddingTable table;
  EvalConfig ec;
  std::vector<Tokens> contexts;
};

// Loads the model, metric and embedding table; the control window is filled in
// by the caller before contexts are drawn.
EvalSetup eval_setup(Run& run) {
  const auto& c = run.cfg();
  EvalSetup s{load_lm(run, "paths.lm", "lm"), metric_from(c), {}, {}, {}};
  const auto embed_path = c.get("paths.embed_corpus", c.require("paths.contexts"));
  s.table = EmbeddingTable::build(run.input("embed_corpus", embed_path),
                                  {.dim = c.number<std::size_t>("eval.embed_dim", 32)});
  s.ec.steps = c.number<std::size_t>("eval.steps", 0);
  s.ec.sampler = sampler_from(c);
  const auto distance = c.get("eval.distance", "euclidean");
  if (distance == "cosine") s.ec.distance = DistanceKind::cosine;
  else if (distance != "euclidean") throw ConfigError("eval.distance must be euclidean or cosine");
  s.ec.long_word_threshold = c.number<double>("eval.long_word_threshold", 6.0);
  s.ec.jobs = run.jobs();
  s.ec.seed = derive_seed(run.seed(), "eval");
  return s;
}

void draw_contexts(Run& run, EvalSetup& s) {
  const auto& c = run.cfg();
  const auto n = c.number<std::size_t>("eval.n", 200);
  const bool prescreen = c.flag("eval.prescreen", false);
  auto candidates = contexts_from(run, s.base.vocab, "contexts", "eval", prescreen ? 20 * n : n, "eval.contexts");
  if (!prescreen) {
    s.contexts = std::move(candidates);
    return;
  }
  s.contexts = prescreen_contexts(s.base.lm, s.base.vocab, candidates, s.metric, s.ec, n);
  s.ec.require_prescreened = true;
  if (s.contexts.empty()) throw DataError("no candidate context passed the pre-screen");
}

void write_report(Run& run, const EvalReport& r) {
  run.output_json("report_" + r.model_id + ".json", to_json(r));
  run.output("report_" + r.model_id + ".csv", to_csv(r));
  run.note(r.model_id, {{"target_in_output", r.target_in_output},
                        {"original_target_in_output", r.original_target_in_output},
                        {"embed_shifts", r.embed_shifts},
                        {"perplexity_proxy", r.perplexity_proxy},
                        {"original_perplexity_proxy", r.original_perplexity_proxy},
                        {"n", r.n}});
}

void cmd_evaluate(Run& run) {
  auto s = eval_setup(run);
  std::optional<NPINetwork<float>> x;
  if (run.cfg().has("paths.npi")) x = load_npi(run, s.base.lm.config());
  s.ec.control = x ? x->control() : control_from(run.cfg(), s.base.lm.config());
  draw_contexts(run, s);
  write_report(run, evaluate(ModelSpec{}, s.base.lm, s.base.vocab, s.contexts, s.metric, s.table, s.ec));
  if (x) {
    ModelSpec spec{.id = run.cfg().get("eval.model_id", "npi"), .kind = ModelKind::npi, .npi = x->as_function()};
    write_report(run, evaluate(spec, s.base.lm, s.base.vocab, s.contexts, s.metric, s.table, s.ec));
  }
}

void cmd_baseline(Run& run) {
  auto s = eval_setup(run);
  s.ec.control = control_from(run.cfg(), s.base.lm.config());
  draw_contexts(run, s);
  const auto kind = run.cfg().get("baseline.kind", "word-prob-avoid");
  std::optional<LoadedLM> alternate;
  ModelSpec spec{.id = kind};
  if (kind == "word-prob-induce") spec.kind = ModelKind::word_prob_induce;
  else if (kind == "word-prob-avoid") spec.kind = ModelKind::word_prob_avoid;
  else if (kind == "fine-tuned") {
    alternate = load_lm(run, "paths.alternate", "alternate");
    if (alternate->lm.config().vocab_size != s.base.lm.config().vocab_size)
      throw DataError("fine-tuned model uses a different vocabulary");
    spec.kind = ModelKind::alternate_lm;
    spec.alternate = &alternate->lm;
  } else {
    throw ConfigError("baseline.kind must be word-prob-induce, word-prob-avoid or fine-tuned");
  }
  write_report(run, evaluate(spec, s.base.lm, s.base.vocab, s.contexts, s.metric, s.table, s.ec));
}

void cmd_gradcheck(Run& run) {
  auto results = op_gradchecks();
  results.push_back(end_to_end_gradcheck(derive_seed(run.seed(), "gradcheck") % 1000));
  json rows = json::array();
  std::size_t failed = 0;
  for (const auto& r : results) {
    rows.push_back({{"name", r.name}, {"relative_error", r.relative_error}, {"checked", r.checked}, {"passed", r.passed()}});
    failed += !r.passed();
  }
  run.output_json("gradcheck.json", {{"op_tolerance", kOpGradTolerance},
                                     {"end_to_end_tolerance", kEndToEndGradTolerance},
                                     {"results", rows}});
  run.note("checked", results.size());
  run.note("failed", failed);
  if (failed) {
    run.finish();
    throw NumericError(std::to_string(failed) + " gradient check(s) exceeded tolerance");
  }
}

const std::vector<CommandSpec>& commands() {
  static const std::vector<CommandSpec> specs{
      {"synth-corpus", "Write the synthetic farm corpus", {{"--sentences", "corpus.sentences", "Sentence count"},
                                                            {"--target-rate", "corpus.target_rate", "Target word rate"}}},
      {"pretrain-lm", "Train the base language model", {{"--corpus", "paths.corpus", "Training corpus text"},
                                                         {"--steps", "train.steps", "Optimizer steps"}}},
      {"finetune-lm", "Fine-tune a copy of the base model", {{"--lm", "paths.lm", "Base model.npiw"},
                                                             {"--corpus", "paths.corpus", "Target corpus text"},
                                                             {"--steps", "finetune.steps", "Optimizer steps"}}},
      {"datagen", "Harvest a labelled activation dataset", {{"--lm", "paths.lm", "Model checkpoint"},
                                                            {"--corpus", "paths.corpus", "Context source text"},
                                                            {"--n", "datagen.n", "Number of examples"}}},
      {"train-classifier", "Pretrain the content classifier", {{"--dataset", "paths.dataset", "Dataset file"}}},
      {"train-npi", "Adversarially train the NPI", {{"--lm", "paths.lm", "Model checkpoint"},
                                                    {"--dataset", "paths.dataset", "Dataset file"},
                                                    {"--y", "paths.y", "Content classifier checkpoint"},
                                                    {"--mode", "train.mode", "induce or avoid"}}},
      {"generate", "Generate with and without an NPI", {{"--lm", "paths.lm", "Model checkpoint"},
                                                        {"--npi", "paths.npi", "NPI checkpoint"},
                                                        {"--prompt", "generate.prompt", "Context text"},
                                                        {"--steps", "generate.steps", "Tokens to generate"}}},
      {"evaluate", "Score an NPI against the unmodified model", {{"--lm", "paths.lm", "Model checkpoint"},
                                                                 {"--npi", "paths.npi", "NPI checkpoint"},
                                                                 {"--contexts", "paths.contexts", "Held-out text"},
                                                                 {"--n", "eval.n", "Number of contexts"}}},
      {"baseline", "Score a baseline model", {{"--lm", "paths.lm", "Model checkpoint"},
                                              {"--kind", "baseline.kind", "word-prob-induce, word-prob-avoid, fine-tuned"},
                                              {"--alternate", "paths.alternate", "Fine-tuned model.npiw"},
                                              {"--contexts", "paths.contexts", "Held-out text"},
                                              {"--n", "eval.n", "Number of contexts"}}},
      {"gradcheck", "Finite-difference gradient checks", {}},
  };
  return specs;
}

void dispatch(const std::string& name, Run& run) {
  if (name == "synth-corpus") cmd_synth_corpus(run);
  else if (name == "pretrain-lm") cmd_pretrain_lm(run);
  else if (name == "finetune-lm") cmd_finetune_lm(run);
  else if (name == "datagen") cmd_datagen(run);
  else if (name == "train-classifier") cmd_train_classifier(run);
  else if (name == "train-npi") cmd_train_npi(run);
  else if (name == "generate") cmd_generate(run);
  else if (name == "evaluate") cmd_evaluate(run);
  else if (name == "baseline") cmd_baseline(run);
  else if (name == "gradcheck") cmd_gradcheck(run);
  else throw UsageError("unknown command " + name);
}

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural programming interface toolkit"};
  app.require_subcommand(1, 1);
  std::vector<std::string> config_files, sets;
  std::uint64_t seed = 1;
  bool deterministic = false;
  std::size_t jobs = 1;
  std::map<std::string, std::map<std::string, std::string>> flag_values;
  std::map<std::string, CLI::App*> subs;
  for (const auto& spec : commands()) {
    auto* sub = app.add_subcommand(spec.name, spec.help);
    sub->add_option("--config", config_files, "key=value config file (repeatable; later files win)");
    sub->add_option("--set", sets, "Override one key=value (repeatable)");
    sub->add_option("--seed", seed, "Root seed");
    sub->add_flag("--deterministic", deterministic, "Single-threaded, reproducible run");
    sub->add_option("--jobs", jobs, "Worker threads when not deterministic")->check(CLI::PositiveNumber);
    for (const auto& f : spec.flags) sub->add_option(f.flag, flag_values[spec.name][f.key], f.help);
    subs[spec.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitUsage, "usage", e.what());
  }

  std::string name;
  for (const auto& [n, sub] : subs)
    if (sub->parsed()) name = n;

  try {
    Config cfg;
    for (const auto& path : config_files) {
      if (!fs::exists(path)) throw UsageError("config file not found: " + path);
      const auto file = Config::load(path);
      for (const auto& [k, v] : file.values()) cfg.set(k, v);
    }
    for (const auto& s : sets) cfg.assign(s, "--set");
    for (const auto& spec : commands())
      if (spec.name == name)
        for (const auto& f : spec.flags)
          if (subs[name]->count(f.flag) > 0) cfg.set(f.key, flag_values[name][f.key]);
    if (subs[name]->count("--seed") == 0 && cfg.has("seed")) seed = cfg.number<std::uint64_t>("seed", seed);
    cfg.set("seed", std::to_string(seed));
    cfg.get("seed", "");
    Run run(name, cfg, seed, deterministic, jobs);
    dispatch(name, run);
    std::cout << run.finish().dump() << "\n";
    return 0;
  } catch (const UsageError& e) {
    return fail(kExitUsage, e.kind(), e.what());
  } catch (const ConfigError& e) {
    return fail(kExitUsage, e.kind(), e.what());
  } catch (const GateError& e) {
    return fail(kExitGate, e.kind(), e.what());
  } catch (const Error& e) {
    return fail(kExitFailure, e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, "internal", e.what());
  }
}

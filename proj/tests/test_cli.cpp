#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "npi/npi.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures(NPI_FIXTURE_DIR);

struct Result {
  int code = -1;
  std::string out, err;
  json out_json() const { return json::parse(out); }
  json err_json() const { return json::parse(err); }
};

// Runs the CLI with NPI_RUN_DIR pointed at a per-test directory.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("npi_cli_" + std::to_string(::getpid())) / info->name();
    fs::remove_all(root_);
    fs::create_directories(root_);
    common_ = " --set paths.lm=" + (kFixtures / "toy_world_v1.npiw").string() +
              " --set paths.lm_vocab=" + (kFixtures / "toy_vocab.txt").string() +
              " --set paths.corpus=" + (kFixtures / "toy_corpus.txt").string() +
              " --set paths.contexts=" + (kFixtures / "toy_corpus.txt").string();
  }
  void TearDown() override { fs::remove_all(root_.parent_path()); }

  Result run(const std::string& args) const {
    const auto out = root_ / "stdout.txt", err = root_ / "stderr.txt";
    const std::string cmd = "NPI_RUN_DIR=" + (root_ / "runs").string() + " " + NPI_CLI_PATH + " " + args + " >" +
                            out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = npi::read_file(out.string());
    r.err = npi::read_file(err.string());
    return r;
  }

  std::string write_config(const std::string& name, const std::string& text) const {
    const auto path = (root_ / name).string();
    npi::write_file(path, text);
    return path;
  }

  fs::path root_;
  std::string common_;
};

std::string artifact(const Result& r, const std::string& name) {
  return (fs::path(r.out_json()["run_dir"].get<std::string>()) / name).string();
}

TEST_F(Cli, MissingSubcommandIsUsageError) {
  auto r = run("");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["error"], "usage");
}

TEST_F(Cli, UnknownCommandAndFlagAreUsageErrors) {
  EXPECT_EQ(run("frobnicate").code, 2);
  auto r = run("datagen --no-such-flag");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["exit_code"], 2);
}

TEST_F(Cli, MalformedConfigIsUsageError) {
  const auto cfg = write_config("bad.cfg", "lm.d_model 128\n");
  auto r = run("synth-corpus --config " + cfg);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["error"], "config");
  EXPECT_EQ(run("synth-corpus --set corpus.sentences=lots").code, 2);
}

TEST_F(Cli, DatagenWithZeroExamplesWritesEmptyDataset) {
  const auto cfg = write_config("c.cfg", "datagen.n=5\ncontrol.w=4\n");
  auto r = run("datagen --config " + cfg + " --n 0" + common_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ds = npi::load_dataset(artifact(r, "dataset.npiq"));
  EXPECT_TRUE(ds.examples.empty());
  EXPECT_FALSE(ds.partial);
  EXPECT_TRUE(npi::audit_dataset(ds).empty());
  EXPECT_EQ(ds.control.w, 4u);
}

TEST_F(Cli, TrainNpiWithoutClassifierIsGateError) {
  auto r = run("train-npi" + common_ + " --set paths.dataset=missing.npiq");
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.err_json()["error"], "gate");
  auto r2 = run("train-npi --y " + (root_ / "nope.npiw").string() + common_);
  EXPECT_EQ(r2.code, 3);
}

TEST_F(Cli, FlagsOverrideConfigFileAndSeedNamesRunDir) {
  const auto cfg = write_config("c.cfg", "corpus.sentences=50\ncorpus.target_rate=0.5\n");
  auto r = run("synth-corpus --config " + cfg + " --sentences 7 --seed 42");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = npi::read_file(artifact(r, "corpus.txt"));
  EXPECT_EQ(npi::split_lines(text).size(), 7u);
  const auto dir = fs::path(r.out_json()["run_dir"].get<std::string>());
  EXPECT_EQ(dir.parent_path(), root_ / "runs");
  EXPECT_TRUE(dir.filename().string().starts_with("synth-corpus-"));
  EXPECT_TRUE(dir.filename().string().ends_with("-seed42"));
  const auto log = json::parse(npi::read_file((dir / "run_log.json").string()));
  EXPECT_EQ(log["config"]["corpus.sentences"], "7");
  EXPECT_EQ(log["config"]["corpus.target_rate"], "0.5");
}

TEST_F(Cli, DeterministicRunsAreByteIdentical) {
  const auto cfg = write_config("c.cfg", "datagen.n=20\ndatagen.contexts=200\ncontrol.w=4\n");
  auto a = run("datagen --deterministic --seed 9 --config " + cfg + common_);
  auto b = run("datagen --deterministic --seed 9 --config " + cfg + common_);
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(a.out_json()["run_dir"], b.out_json()["run_dir"]);
  for (const auto* name : {"dataset.npiq", "run_log.json"})
    EXPECT_EQ(npi::read_file(artifact(a, name)), npi::read_file(artifact(b, name))) << name;
}

TEST_F(Cli, RunLogRecordsInputDigests) {
  auto r = run("datagen --n 0" + common_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto log = json::parse(npi::read_file(artifact(r, "run_log.json")));
  const auto lm_bytes = npi::read_file((kFixtures / "toy_world_v1.npiw").string());
  EXPECT_EQ(log["inputs"]["lm"]["sha256"], npi::file_digest_hex(lm_bytes));
  EXPECT_TRUE(log["inputs"].contains("lm_vocab"));
  EXPECT_TRUE(log["inputs"].contains("corpus"));
  const auto ds_bytes = npi::read_file(artifact(r, "dataset.npiq"));
  EXPECT_EQ(log["outputs"]["dataset.npiq"], npi::file_digest_hex(ds_bytes));
  const auto ds = npi::decode_dataset(ds_bytes);
  EXPECT_EQ(npi::to_hex(ds.lm_digest), npi::file_digest_hex(lm_bytes));
}

TEST_F(Cli, ClassifierBelowGateExitsThree) {
  const auto cfg = write_config("c.cfg", "datagen.n=20\ndatagen.contexts=300\ncontrol.w=4\ny.hidden=8\ny.epochs=1\n");
  auto d = run("datagen --config " + cfg + common_);
  ASSERT_EQ(d.code, 0) << d.err;
  auto r = run("train-classifier --config " + cfg + " --set y.gate=1.01 --dataset " + artifact(d, "dataset.npiq"));
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.err_json()["error"], "gate");
}

TEST_F(Cli, FullPipelineEmitsEvalReport) {
  const auto cfg = write_config("c.cfg",
                                "control.w=4\n"
                                "datagen.n=60\n"
                                "datagen.contexts=600\n"
                                "y.hidden=16\n"
                                "y.epochs=10\n"
                                "y.gate=0.6\n"
                                "x.hidden=16\n"
                                "z.hidden=16\n"
                                "train.epochs=1\n"
                                "train.y_gate=0.6\n"
                                "eval.n=12\n");
  auto d = run("datagen --config " + cfg + common_);
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(d.out_json()["results"]["examples"], 60);
  auto y = run("train-classifier --config " + cfg + " --dataset " + artifact(d, "dataset.npiq"));
  ASSERT_EQ(y.code, 0) << y.err;
  auto x = run("train-npi --config " + cfg + common_ + " --dataset " + artifact(d, "dataset.npiq") + " --y " +
               artifact(y, "y.npiw"));
  ASSERT_EQ(x.code, 0) << x.err;
  const auto rows = npi::split_lines(npi::read_file(artifact(x, "training_log.jsonl")));
  ASSERT_FALSE(rows.empty());
  for (const auto& line : rows) {
    const auto row = json::parse(line);
    EXPECT_GE(row["e_x_content"].get<double>(), 0.0);
  }
  auto g = run("generate --config " + cfg + common_ + " --npi " + artifact(x, "x.npiw") + " --prompt \"the dog sat on\"");
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_TRUE(g.out_json()["results"].contains("controlled"));
  auto e = run("evaluate --config " + cfg + common_ + " --jobs 2 --npi " + artifact(x, "x.npiw"));
  ASSERT_EQ(e.code, 0) << e.err;
  const auto report = json::parse(npi::read_file(artifact(e, "report_npi.json")));
  EXPECT_EQ(report["n"], 12);
  EXPECT_EQ(report["rows"].size(), 12u);
  EXPECT_TRUE(report["inputs"].contains("npi"));
  EXPECT_TRUE(fs::exists(artifact(e, "report_unmodified.csv")));
}

TEST_F(Cli, FineTunedBaselineLeavesBaseUntouched) {
  const auto before = npi::read_file((kFixtures / "toy_world_v1.npiw").string());
  const auto cfg = write_config("c.cfg", "finetune.steps=20\ncontrol.w=4\neval.n=5\n");
  auto f = run("finetune-lm --config " + cfg + common_);
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_EQ(f.out_json()["results"]["base_digest"], npi::file_digest_hex(before));
  EXPECT_NE(f.out_json()["results"]["tuned_digest"], f.out_json()["results"]["base_digest"]);
  auto b = run("baseline --config " + cfg + common_ + " --kind fine-tuned --alternate " + artifact(f, "model.npiw"));
  ASSERT_EQ(b.code, 0) << b.err;
  auto avoid = run("baseline --config " + cfg + common_ + " --kind word-prob-avoid");
  ASSERT_EQ(avoid.code, 0) << avoid.err;
  EXPECT_EQ(avoid.out_json()["results"]["word-prob-avoid"]["target_in_output"], 0.0);
  EXPECT_EQ(npi::read_file((kFixtures / "toy_world_v1.npiw").string()), before);
  EXPECT_EQ(run("baseline --kind sorcery" + common_).code, 2);
}

TEST_F(Cli, GradcheckCommandPasses) {
  auto r = run("gradcheck");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(npi::read_file(artifact(r, "gradcheck.json")));
  for (const auto& row : report["results"]) EXPECT_TRUE(row["passed"].get<bool>()) << row["name"];
}

}  // namespace

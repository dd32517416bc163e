// Copyright 2026 The DistRE Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "distre/cli.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;
using distre::testing::fresh_dir;
using distre::testing::read_file;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = distre::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

const char* kTinySpec =
    "seed = 3\nnoise = 0.3\ntrain_bags = 24\ntest_bags = 12\nna_fraction = 0.3\n"
    "max_expressing = 2\ngenerated_entities = 40\n"
    "relation = born_in\ntemplate = HEAD was born in TAIL .\n"
    "relation = works_for\ntemplate = HEAD works for TAIL .\n"
    "distractor = HEAD met TAIL .\ndistractor = HEAD and TAIL argued .\n";

const std::vector<std::string> kTinyModel = {"--layers", "1", "--heads", "2", "--width", "16",
                                             "--ff-width", "32", "--context", "48"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST(CliTest, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run({}).code, distre::cli::kExitUsageError);
  EXPECT_EQ(run({"frobnicate"}).code, distre::cli::kExitUsageError);
  EXPECT_EQ(run({"bpe-train", "--no-such-flag", "1"}).code, distre::cli::kExitUsageError);
  EXPECT_EQ(run({"bpe-train", "--corpus", "x", "--out", "y", "--vocab-size", "many"}).code,
            distre::cli::kExitUsageError);

  const Result missing = run({"finetune", "--labels", "l.txt", "--out", "o"});
  EXPECT_EQ(missing.code, distre::cli::kExitUsageError);
  EXPECT_NE(missing.err.find("--train"), std::string::npos) << missing.err;
}

TEST(CliTest, HelpExitsWithZero) {
  const Result top = run({"--help"});
  EXPECT_EQ(top.code, distre::cli::kExitOk);
  for (const char* name : {"bpe-train", "gen-synthetic", "pretrain-lm", "finetune", "predict",
                           "evaluate", "export-topn"}) {
    EXPECT_NE(top.out.find(name), std::string::npos) << name;
  }
  const Result sub = run({"finetune", "--help"});
  EXPECT_EQ(sub.code, distre::cli::kExitOk);
  EXPECT_NE(sub.out.find("--lambda"), std::string::npos);
}

TEST(CliTest, MissingInputExitsWithOne) {
  const auto dir = fresh_dir("cli_missing");
  const Result r = run({"bpe-train", "--corpus", (dir / "absent.txt").string(), "--out",
                        (dir / "v.txt").string()});
  EXPECT_EQ(r.code, distre::cli::kExitDataError);
  EXPECT_NE(r.err.find("absent.txt"), std::string::npos) << r.err;
  EXPECT_EQ(run({"evaluate", "--pred", (dir / "p.jsonl").string(), "--gold",
                 (dir / "g.jsonl").string(), "--out", (dir / "e").string()})
                .code,
            distre::cli::kExitDataError);
}

TEST(CliTest, UnknownPresetIsAConfigError) {
  const auto dir = fresh_dir("cli_preset");
  write(dir / "c.txt", "a b c\n");
  write(dir / "l.txt", "NA\nr\n");
  write(dir / "t.jsonl", "{\"text\":\"a b\",\"head\":\"a\",\"tail\":\"b\",\"relation\":\"r\"}\n");
  EXPECT_EQ(run({"bpe-train", "--corpus", (dir / "c.txt").string(), "--vocab-size", "270",
                 "--out", (dir / "v.txt").string()})
                .code,
            0);
  EXPECT_EQ(run({"finetune", "--train", (dir / "t.jsonl").string(), "--labels",
                 (dir / "l.txt").string(), "--vocab", (dir / "v.txt").string(), "--preset",
                 "huge", "--out", (dir / "o").string()})
                .code,
            distre::cli::kExitUsageError);
}

TEST(CliTest, RunConfigRecordsDefaultsAndReloads) {
  const auto dir = fresh_dir("cli_config");
  write(dir / "c.txt", "the cat sat on the mat\nthe dog sat on the log\n");
  const std::string vocab = (dir / "v.txt").string();
  ASSERT_EQ(run({"bpe-train", "--corpus", (dir / "c.txt").string(), "--out", vocab}).code, 0);
  const std::string config = read_file(vocab + ".run_config.txt");
  EXPECT_NE(config.find("command = bpe-train"), std::string::npos) << config;
  EXPECT_NE(config.find("vocab_size = 8192"), std::string::npos) << config;

  // Reloading the recorded config with a different output reproduces the artifact.
  const std::string again = (dir / "again.txt").string();
  ASSERT_EQ(run({"bpe-train", "--config", vocab + ".run_config.txt", "--out", again}).code, 0);
  EXPECT_EQ(read_file(again), read_file(vocab));

  // Flags override values from the file.
  const std::string small = (dir / "small.txt").string();
  ASSERT_EQ(run({"bpe-train", "--config", vocab + ".run_config.txt", "--vocab-size", "265",
                 "--out", small})
                .code,
            0);
  EXPECT_NE(read_file(small + ".run_config.txt").find("vocab_size = 265"), std::string::npos);
  EXPECT_EQ(distre::bpe::load_vocab(small).size(), 265u);

  write(dir / "bad.txt", "command = bpe-train\nno_such_key = 1\n");
  EXPECT_EQ(run({"bpe-train", "--config", (dir / "bad.txt").string()}).code,
            distre::cli::kExitUsageError);
}

TEST(CliTest, EndToEndPipeline) {
  const auto dir = fresh_dir("cli_e2e");
  write(dir / "spec.txt", kTinySpec);
  const fs::path syn = dir / "syn";
  ASSERT_EQ(run({"gen-synthetic", "--spec", (dir / "spec.txt").string(), "--out", syn.string()}).code, 0);
  for (const char* f : {"train.jsonl", "test.jsonl", "labels.txt", "corpus.txt", "spec.txt",
                        "run_config.txt"}) {
    EXPECT_TRUE(fs::exists(syn / f)) << f;
  }
  const std::string vocab = (dir / "vocab.txt").string();
  ASSERT_EQ(run({"bpe-train", "--corpus", (syn / "corpus.txt").string(), "--vocab-size", "300",
                 "--out", vocab})
                .code,
            0);

  const fs::path lm = dir / "lm";
  const Result pre = run(cat({"pretrain-lm", "--corpus", (syn / "corpus.txt").string(), "--vocab",
                              vocab, "--out", lm.string(), "--epochs", "1", "--seed", "5"},
                             kTinyModel));
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_TRUE(fs::exists(lm / "manifest.txt"));
  EXPECT_TRUE(fs::exists(lm / "metrics.csv"));
  EXPECT_NE(read_file(lm / "manifest.txt").find("meta.stage = lm"), std::string::npos);

  const fs::path ft = dir / "ft";
  const Result fin = run({"finetune", "--train", (syn / "train.jsonl").string(), "--labels",
                          (syn / "labels.txt").string(), "--init", lm.string(), "--out",
                          ft.string(), "--epochs", "1", "--batch-size", "4", "--seed", "5"});
  ASSERT_EQ(fin.code, 0) << fin.err;
  EXPECT_NE(read_file(ft / "manifest.txt").find("config.relations = 3"), std::string::npos);
  const std::string metrics = read_file(ft / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "step,lr,loss,bag_accuracy");

  // The recorded fine-tuning config reproduces the checkpoint bit for bit.
  const fs::path ft2 = dir / "ft2";
  ASSERT_EQ(run({"finetune", "--config", (ft / "run_config.txt").string(), "--out", ft2.string(),
                 "--metrics", (dir / "m2.csv").string()})
                .code,
            0);
  EXPECT_EQ(read_file(ft2 / "weights.bin"), read_file(ft / "weights.bin"));

  const std::string pred = (dir / "pred.jsonl").string();
  const Result p = run({"predict", "--checkpoint", ft.string(), "--test",
                        (syn / "test.jsonl").string(), "--out", pred});
  ASSERT_EQ(p.code, 0) << p.err;
  std::size_t lines = 0;
  {
    std::istringstream is(read_file(pred));
    std::string line;
    while (std::getline(is, line)) {
      const auto j = nlohmann::json::parse(line);
      EXPECT_NE(j["relation"].get<std::string>(), "NA");
      ++lines;
    }
  }
  EXPECT_EQ(lines, 12u * 2u);  // every test pair scored for both relations

  const fs::path report = dir / "eval";
  const Result e = run({"evaluate", "--pred", pred, "--gold", (syn / "test.jsonl").string(),
                        "--out", report.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto summary = nlohmann::json::parse(read_file(report / "summary.json"));
  EXPECT_GE(summary["auc"].get<double>(), 0.0);
  EXPECT_LE(summary["auc"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(report / "pr_curve.csv"));

  const std::string top = (dir / "top.csv").string();
  const Result t = run({"export-topn", "--pred", pred, "--gold", (syn / "test.jsonl").string(),
                        "--n", "5", "--out", top});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(fs::exists(dir / "top.distribution.csv"));

  // A checkpoint whose label table disagrees with its head is rejected.
  write(ft / "labels.txt", "NA\nborn_in\n");
  EXPECT_EQ(run({"predict", "--checkpoint", ft.string(), "--test", (syn / "test.jsonl").string(),
                 "--out", (dir / "x.jsonl").string()})
                .code,
            distre::cli::kExitUsageError);
}

}  // namespace

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

// Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any
// criterion fails. Thresholds are fixed here and never relaxed at run time.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "distre/checkpoint.hpp"
#include "distre/cli.hpp"
#include "distre/distre.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;
namespace mil = distre::mil;
namespace eval = distre::eval;
using distre::EncodedBag;
using distre::Graph;
using distre::ModelConfig;
using distre::Mode;
using distre::Parameters;
using distre::Rng;
using distre::Var;
using distre::testing::TensorD;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ------------------------------------------------------------ tiny models

constexpr int kClf = 49;

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.width = 16;
  c.ff_width = 32;
  c.context = 16;
  c.vocab_size = 50;
  c.relations = 4;
  return c;
}

std::vector<int> random_sequence(Rng& rng, std::size_t len, bool clf_last) {
  std::vector<int> ids(len);
  for (auto& id : ids) id = static_cast<int>(distre::uniform_index(rng, 48));
  if (clf_last) ids.back() = kClf;
  return ids;
}

EncodedBag random_bag(Rng& rng, std::size_t n, int label) {
  EncodedBag bag;
  bag.label = label;
  for (std::size_t i = 0; i < n; ++i) bag.sequences.push_back(random_sequence(rng, 4 + i % 6, true));
  return bag;
}

Outcome gradient_correctness() {
  const auto start = Clock::now();
  ModelConfig config = distre::TrainConfig{}.apply_dropout(tiny_config());
  Rng rng(2026);
  Parameters<double> params = Parameters<double>::initialized(config, rng);
  const EncodedBag bag = random_bag(rng, 3, 2);
  // Train mode with a reseeded generator: dropout masks are part of the
  // function and identical across evaluations.
  const auto errors = distre::testing::check_parameter_gradients(
      params, [&](Graph<double>& g, const distre::BoundParams& p) {
        Rng dropout_rng(5);
        return mil::combined_loss(g, p, config, bag, kClf, 0.5, Mode::kTrain, &dropout_rng);
      });
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, e] : errors) {
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-4 && elapsed < 60.0,
          "max rel error " + fmt(worst) + " (" + worst_name + ") over " +
              std::to_string(errors.size()) + " tensors, " + fmt(elapsed, 3) + " s"};
}

Outcome causality() {
  const ModelConfig config = tiny_config();
  Rng rng(7);
  const Parameters<double> params = Parameters<double>::initialized(config, rng);
  double worst = 0;
  std::size_t perturbations = 0;
  auto states = [&](const std::vector<int>& ids) {
    Graph<double> g;
    const auto p = distre::bind(g, params, static_cast<Parameters<double>*>(nullptr));
    const auto trace = distre::forward(g, p, config, ids, Mode::kEval, nullptr);
    std::vector<TensorD> out;
    for (Var s : trace.states) out.push_back(g.value(s));
    return out;
  };
  for (int s = 0; s < 100; ++s) {
    const auto ids = random_sequence(rng, 2 + distre::uniform_index(rng, config.context - 1), false);
    const auto base = states(ids);
    for (std::size_t pos = 1; pos < ids.size(); ++pos) {
      auto changed = ids;
      changed[pos] = (ids[pos] + 1 + static_cast<int>(distre::uniform_index(rng, 47))) % 48;
      const auto after = states(changed);
      ++perturbations;
      for (std::size_t layer = 0; layer < base.size(); ++layer) {
        for (std::size_t i = 0; i < pos; ++i) {
          for (std::size_t j = 0; j < config.width; ++j) {
            worst = std::max(worst, std::abs(base[layer].at(i, j) - after[layer].at(i, j)));
          }
        }
      }
    }
  }
  return {worst <= 1e-6, "max change at earlier positions " + fmt(worst) + " over " +
                             std::to_string(perturbations) + " perturbations"};
}

Outcome selective_attention_properties() {
  Rng rng(11);
  std::vector<std::string> failures;

  {  // identical sentences: uniform weights
    Graph<double> g;
    const TensorD row = distre::testing::random_tensor(1, 16, rng);
    const std::vector<Var> reprs(6, g.constant(row));
    const auto agg =
        mil::selective_attention(g, reprs, g.constant(distre::testing::random_tensor(1, 16, rng, 3.0)));
    for (double a : g.value(agg.alphas).values()) {
      if (std::abs(a - 1.0 / 6.0) > 1e-6) failures.push_back("uniform weights");
    }
  }
  {  // permutation invariance of the loss
    const ModelConfig config = tiny_config();
    const Parameters<double> params = Parameters<double>::initialized(config, rng);
    const EncodedBag bag = random_bag(rng, 5, 3);
    EncodedBag permuted = bag;
    const std::vector<std::size_t> perm = {2, 4, 0, 3, 1};
    for (std::size_t i = 0; i < perm.size(); ++i) permuted.sequences[i] = bag.sequences[perm[i]];
    auto loss = [&](const EncodedBag& b) {
      Graph<double> g;
      const auto p = distre::bind(g, params, static_cast<Parameters<double>*>(nullptr));
      return g.value(mil::combined_loss(g, p, config, b, kClf, 0.5, Mode::kEval, nullptr))[0];
    };
    if (std::abs(loss(bag) - loss(permuted)) > 1e-6) failures.push_back("permutation invariance");
  }
  {  // zero query equals average aggregation exactly
    Graph<double> g;
    std::vector<Var> reprs;
    for (int i = 0; i < 7; ++i) reprs.push_back(g.constant(distre::testing::random_tensor(1, 16, rng)));
    const auto attn = mil::selective_attention(g, reprs, g.constant(TensorD::matrix(1, 16)));
    const auto avg = mil::average_aggregation(g, reprs);
    if (!(g.value(attn.bag) == g.value(avg.bag))) failures.push_back("zero query");
  }
  {  // single sentence is returned exactly
    Graph<double> g;
    const TensorD row = distre::testing::random_tensor(1, 16, rng);
    const auto agg = mil::selective_attention(g, {g.constant(row)},
                                              g.constant(distre::testing::random_tensor(1, 16, rng)));
    if (!(g.value(agg.bag) == row)) failures.push_back("single sentence");
  }
  std::string detail = "uniform, permutation, zero-query and single-sentence checks";
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

Outcome attention_hand_check() {
  Graph<double> g;
  const Var query = g.constant(TensorD::row({2.0, 0.0, 0.0}));
  const Var s1 = g.constant(TensorD::row({0.5 * std::log(3.0) + 0.1, 1.0, -4.0}));
  const Var s2 = g.constant(TensorD::row({0.1, 7.0, 2.0}));
  const auto alphas = g.value(mil::selective_attention(g, {s1, s2}, query).alphas);
  const double e = std::max(std::abs(alphas[0] - 0.75), std::abs(alphas[1] - 0.25));
  return {e <= 1e-9, "alpha = [" + fmt(alphas[0], 12) + ", " + fmt(alphas[1], 12) + "]"};
}

Outcome bpe_checks() {
  const auto corpus = distre::testing::random_lines(1000, 17, true);
  const auto vocab = distre::bpe::learn_bpe(corpus, 400);
  std::size_t ok = 0;
  for (const auto& line : corpus) {
    if (distre::bpe::decode(vocab, distre::bpe::encode(vocab, line)) == line) ++ok;
  }
  const std::vector<std::string> words = {
      "low lower lowest newer wider",  "new news newest low low",
      "slow slower slowly wide wider", "newer lowest lower news widest",
  };
  const auto small = distre::bpe::learn_bpe(words, 300);
  const auto learned = distre::testing::learned_merges(small);
  const auto oracle = distre::testing::recount_merges(words, learned.size() + 10);
  const bool merges_match = learned == oracle;
  return {ok == corpus.size() && merges_match,
          "round trip " + std::to_string(ok) + "/" + std::to_string(corpus.size()) + " lines; " +
              std::to_string(learned.size()) + " merges " +
              (merges_match ? "match" : "differ from") + " the recount oracle"};
}

Outcome evaluation_oracle() {
  Rng rng(31);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<eval::BagPrediction> preds;
    eval::GoldFacts gold;
    const std::size_t n = 1 + distre::uniform_index(rng, 30);
    for (std::size_t i = 0; i < n; ++i) {
      eval::BagPrediction p;
      p.head = "h" + std::to_string(i);
      p.tail = "t" + std::to_string(distre::uniform_index(rng, 3));
      p.relation = "r" + std::to_string(distre::uniform_index(rng, 2));
      p.score = trial % 2 ? distre::uniform01(rng)
                          : static_cast<double>(distre::uniform_index(rng, 6)) / 6.0;
      if (distre::uniform01(rng) < 0.4) gold.emplace(p.head, p.tail, p.relation);
      preds.push_back(std::move(p));
    }
    if (trial % 3 == 0 || gold.empty()) gold.emplace("missed", "fact", "r0");
    const auto report = eval::evaluate(preds, gold, {1, 3, 10, 50});
    worst = std::max(worst, std::abs(report.auc - distre::testing::brute_force_auc(preds, gold)));
    for (const auto& [k, p] : report.p_at) {
      worst = std::max(worst, std::abs(p - distre::testing::brute_force_p_at(preds, gold, k)));
    }
  }
  const eval::GoldFacts gold = {{"a", "b", "r"}, {"e", "f", "r"}};
  const auto hand = eval::evaluate({{"a", "b", "r", 0.9, {}}, {"c", "d", "r", 0.8, {}},
                                    {"e", "f", "r", 0.7, {}}},
                                   gold);
  const double hand_error = std::abs(hand.auc - 5.0 / 6.0);
  return {worst <= 1e-9 && hand_error <= 1e-9,
          "max deviation " + fmt(worst) + " over 1000 sets; hand example AUC " + fmt(hand.auc, 12)};
}

Outcome hyperparameter_fidelity() {
  const distre::TrainConfig d;
  const distre::RunConfig cli;  // what `distre finetune` uses without flags
  bool ok = true;
  for (const auto* t : {&d, &cli.training}) {
    ok = ok && t->beta1 == 0.9 && t->beta2 == 0.999 && t->batch_size == 8 && t->lr_peak == 6.25e-5 &&
         t->warmup_fraction == 0.002 && t->epochs == 3 && t->dropout_residual == 0.1 &&
         t->dropout_attention == 0.1 && t->dropout_classifier == 0.2;
  }
  return {ok, "Adam(" + fmt(d.beta1) + ", " + fmt(d.beta2) + "), batch " + std::to_string(d.batch_size) +
                  ", lr " + fmt(d.lr_peak) + ", warmup " + fmt(d.warmup_fraction) + ", " +
                  std::to_string(d.epochs) + " epochs, dropout " + fmt(d.dropout_residual) + "/" +
                  fmt(d.dropout_attention) + "/" + fmt(d.dropout_classifier)};
}

// ------------------------------------------------------------ pipelines

void cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = distre::cli::run(args, out, err);
  if (code != 0) {
    std::string cmd;
    for (const auto& a : args) cmd += a + ' ';
    throw std::runtime_error("command failed (" + std::to_string(code) + "): " + cmd + "\n" + err.str());
  }
}

// Settings pinned from the pilot runs (tiny model, 3 + 3 epochs).
const std::vector<std::string> kModelFlags = {"--layers", "2", "--heads", "2", "--width", "32",
                                              "--ff-width", "64", "--context", "64"};
constexpr const char* kPretrainLr = "1e-3";
constexpr const char* kFinetuneLr = "1e-3";
constexpr const char* kBpeSize = "400";

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

struct SeedRun {
  double pretrained_auc = 0;
  double scratch_auc = 0;
  fs::path finetuned;
};

// Synthetic data and vocabulary shared by every seed.
void prepare_data(const fs::path& spec, const fs::path& work) {
  cli({"gen-synthetic", "--spec", spec.string(), "--out", (work / "syn").string()});
  cli({"bpe-train", "--corpus", (work / "syn" / "corpus.txt").string(), "--vocab-size", kBpeSize,
       "--out", (work / "vocab.txt").string()});
}

double evaluate_model(const fs::path& model, const fs::path& work, const std::string& tag) {
  const std::string pred = (work / (tag + ".pred.jsonl")).string();
  cli({"predict", "--checkpoint", model.string(), "--test", (work / "syn" / "test.jsonl").string(),
       "--out", pred});
  cli({"evaluate", "--pred", pred, "--gold", (work / "syn" / "test.jsonl").string(), "--out",
       (work / (tag + ".eval")).string()});
  const auto summary = nlohmann::json::parse(distre::testing::read_file(work / (tag + ".eval") / "summary.json"));
  return summary["auc"].get<double>();
}

SeedRun run_seed(const fs::path& work, int seed, bool with_scratch) {
  const std::string s = std::to_string(seed);
  const fs::path lm = work / ("lm" + s), ft = work / ("ft" + s), sc = work / ("sc" + s);
  const auto syn = work / "syn";
  cli(std::vector<std::string>{"pretrain-lm", "--corpus", (syn / "corpus.txt").string(), "--vocab",
                               (work / "vocab.txt").string(), "--out", lm.string(), "--epochs", "3",
                               "--lr", kPretrainLr, "--seed", s} +
      kModelFlags);
  const std::vector<std::string> finetune = {"finetune",  "--train",  (syn / "train.jsonl").string(),
                                             "--labels",  (syn / "labels.txt").string(),
                                             "--epochs",  "3",        "--lr", kFinetuneLr,
                                             "--seed",    s};
  cli(finetune + std::vector<std::string>{"--init", lm.string(), "--out", ft.string()});
  SeedRun r;
  r.finetuned = ft;
  r.pretrained_auc = evaluate_model(ft, work, "ft" + s);
  if (with_scratch) {
    cli(finetune + std::vector<std::string>{"--vocab", (work / "vocab.txt").string(), "--out", sc.string()} +
        kModelFlags);
    r.scratch_auc = evaluate_model(sc, work, "sc" + s);
  }
  return r;
}

// Expected AUC of a uniformly random ranking of the same predictions.
double random_baseline_auc(const fs::path& pred_file, const eval::GoldFacts& gold) {
  auto preds = eval::load_predictions(pred_file.string());
  Rng rng(99);
  double total = 0;
  constexpr int kShuffles = 20;
  for (int i = 0; i < kShuffles; ++i) {
    for (auto& p : preds) p.score = distre::uniform01(rng);
    total += eval::evaluate(preds, gold).auc;
  }
  return total / kShuffles;
}

// Share of noisy positive test bags (at least one template sentence and one
// distractor) whose template sentences get mean weight above 1/n under the
// gold relation's query.
double template_attention_share(const fs::path& model, const fs::path& test_file) {
  const auto ck = distre::load_checkpoint<float>(model);
  const auto vocab = distre::bpe::load_vocab((model / "vocab.txt").string());
  distre::LabelTable labels = distre::load_label_table((model / "labels.txt").string());
  const auto examples = distre::load_jsonl(test_file.string(), labels, false);
  std::size_t noisy = 0, above = 0;
  for (const auto& bag : distre::build_bags(examples, distre::BagMode::kTest)) {
    if (bag.gold.size() != 1 || bag.sentences.size() > distre::kDefaultMaxBagSentences) continue;
    std::size_t templates = 0;
    for (const auto& s : bag.sentences) templates += s.expresses.value_or(false) ? 1 : 0;
    if (templates == 0 || templates == bag.sentences.size()) continue;
    const auto enc = distre::encode_bag(vocab, bag, ck.config.context);
    const auto reprs = mil::bag_representations(ck.params, ck.config, enc, vocab.specials().clf);
    const auto alphas = mil::attention_for(ck.params, ck.config, reprs, bag.gold[0]);
    double mean = 0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      if (bag.sentences[i].expresses.value_or(false)) mean += alphas[i];
    }
    mean /= static_cast<double>(templates);
    ++noisy;
    if (mean > 1.0 / static_cast<double>(alphas.size())) ++above;
  }
  return noisy ? static_cast<double>(above) / static_cast<double>(noisy) : 0.0;
}

std::vector<Outcome> synthetic_end_to_end(const fs::path& work) {
  const auto start = Clock::now();
  fs::remove_all(work);
  fs::create_directories(work);
  prepare_data(fs::path(DISTRE_DATA_DIR) / "synthetic_spec.txt", work);

  const std::vector<int> seeds = {42, 1, 2};
  std::vector<SeedRun> runs;
  for (int seed : seeds) runs.push_back(run_seed(work, seed, true));

  distre::LabelTable labels;
  const auto gold = eval::gold_facts(distre::load_jsonl((work / "syn" / "test.jsonl").string(), labels, true), labels);
  double worst_margin = 1.0;
  std::string aucs, wins_detail, shares;
  std::size_t wins = 0;
  double worst_share = 1.0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const std::string s = std::to_string(seeds[i]);
    const double baseline = random_baseline_auc(work / ("ft" + s + ".pred.jsonl"), gold);
    worst_margin = std::min(worst_margin, runs[i].pretrained_auc - baseline);
    aucs += (i ? ", " : "") + std::string("seed ") + s + " " + fmt(runs[i].pretrained_auc) +
            " vs random " + fmt(baseline);
    if (runs[i].pretrained_auc >= runs[i].scratch_auc) ++wins;
    wins_detail += (i ? ", " : "") + fmt(runs[i].pretrained_auc) + " vs " + fmt(runs[i].scratch_auc);
    const double share = template_attention_share(runs[i].finetuned, work / "syn" / "test.jsonl");
    worst_share = std::min(worst_share, share);
    shares += (i ? ", " : "") + fmt(100 * share, 3) + "%";
  }
  const double elapsed = seconds_since(start);
  return {
      {worst_margin >= 0.5, "(a) AUC minus random baseline >= 0.5 in every seed: " + aucs},
      {wins >= 2, "(b) pretrained >= scratch AUC in " + std::to_string(wins) + "/3 seeds: " + wins_detail},
      {worst_share >= 0.70, "(c) template sentence above 1/n in noisy positive bags: " + shares},
      {elapsed < 15 * 60, "runtime " + fmt(elapsed, 4) + " s (limit 900 s)"},
  };
}

Outcome determinism(const fs::path& work) {
  // The bundled spec shrunk to a few hundred bags, run twice end to end.
  const fs::path spec = work / "spec.txt";
  fs::remove_all(work);
  fs::create_directories(work);
  {
    std::ofstream os(spec, std::ios::binary);
    os << distre::testing::read_file(fs::path(DISTRE_DATA_DIR) / "synthetic_spec.txt")
       << "\ntrain_bags = 200\ntest_bags = 50\npretrain_sentences = 200\n";
  }
  std::vector<std::string> artifacts = {"vocab.txt",          "lm7/weights.bin",     "lm7/manifest.txt",
                                        "ft7/weights.bin",    "ft7/manifest.txt",    "ft7/metrics.csv",
                                        "ft7.pred.jsonl",     "ft7.eval/summary.json",
                                        "ft7.eval/pr_curve.csv"};
  std::vector<std::vector<std::string>> contents;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = work / run;
    prepare_data(spec, dir);
    run_seed(dir, 7, false);
    contents.emplace_back();
    for (const auto& a : artifacts) contents.back().push_back(distre::testing::read_file(dir / a));
  }
  std::vector<std::string> differing;
  for (std::size_t i = 0; i < artifacts.size(); ++i) {
    if (contents[0][i] != contents[1][i] || contents[0][i].empty()) differing.push_back(artifacts[i]);
  }
  std::string detail = std::to_string(artifacts.size() - differing.size()) + "/" +
                       std::to_string(artifacts.size()) + " artifacts bit-identical";
  for (const auto& d : differing) detail += "; differs or empty: " + d;
  return {differing.empty(), detail};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "distre_acceptance";
  int failures = 0;
  auto report = [&](const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS  " : "FAIL  ") << name << ": " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };
  auto guarded = [&](const std::string& name, const std::function<Outcome()>& check) {
    try {
      report(name, check());
    } catch (const std::exception& e) {
      report(name, {false, std::string("error: ") + e.what()});
    }
  };

  guarded("gradient correctness", gradient_correctness);
  guarded("causality", causality);
  guarded("selective attention properties", selective_attention_properties);
  guarded("attention weights hand check", attention_hand_check);
  guarded("bpe round trip and merge oracle", bpe_checks);
  guarded("evaluation oracle", evaluation_oracle);
  guarded("hyperparameter fidelity", hyperparameter_fidelity);
  try {
    const auto outcomes = synthetic_end_to_end(work / "synthetic");
    const char* names[] = {"synthetic end-to-end (a) above random",
                           "synthetic end-to-end (b) pretraining helps",
                           "synthetic end-to-end (c) attention on template sentence",
                           "synthetic end-to-end runtime"};
    for (std::size_t i = 0; i < outcomes.size(); ++i) report(names[i], outcomes[i]);
  } catch (const std::exception& e) {
    report("synthetic end-to-end", {false, std::string("error: ") + e.what()});
  }
  guarded("determinism", [&] { return determinism(work / "determinism"); });

  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed"
                         : std::string("acceptance: all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}

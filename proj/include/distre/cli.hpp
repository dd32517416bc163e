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

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distre/bpe.hpp"
#include "distre/checkpoint.hpp"
#include "distre/data.hpp"
#include "distre/error.hpp"
#include "distre/eval.hpp"
#include "distre/mil.hpp"
#include "distre/model.hpp"
#include "distre/run_config.hpp"
#include "distre/synthetic.hpp"
#include "distre/trainer.hpp"

namespace distre::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsageError = 2;

namespace fs = std::filesystem;

struct Command {
  std::string name;
  std::string description;
  std::vector<std::string> keys;      // config keys exposed as flags
  std::vector<std::string> required;  // keys that must be non-empty
};

inline const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys = {"preset", "layers", "heads", "width",
                                                "ff_width", "context"};
  return keys;
}

inline const std::vector<std::string>& optimizer_keys() {
  static const std::vector<std::string> keys = {
      "lr",   "beta1",     "beta2",           "adam_eps",         "batch_size", "epochs",
      "warmup_fraction", "seed", "clip_norm", "dropout_residual", "dropout_attention"};
  return keys;
}

inline std::vector<Command> commands() {
  auto join = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  std::vector<std::string> pretrain = join({"corpus", "vocab", "init", "out", "metrics"}, model_keys());
  pretrain = join(pretrain, optimizer_keys());
  std::vector<std::string> finetune =
      join({"train", "labels", "vocab", "init", "out", "metrics"}, model_keys());
  finetune = join(finetune, optimizer_keys());
  finetune = join(finetune, {"lambda", "dropout_classifier", "allow_new_labels", "max_bag_sentences"});
  return {
      {"bpe-train", "learn a byte-pair vocabulary", {"corpus", "vocab_size", "out"},
       {"corpus", "out"}},
      {"gen-synthetic", "generate a synthetic distantly supervised corpus", {"spec", "out"},
       {"spec", "out"}},
      {"pretrain-lm", "pretrain the decoder as a language model", pretrain, {"corpus", "out"}},
      {"finetune", "fine-tune with bag-level selective attention", finetune,
       {"train", "labels", "out"}},
      {"predict", "score every non-NA relation for each test entity pair",
       {"checkpoint", "test", "out", "max_bag_sentences"}, {"checkpoint", "test", "out"}},
      {"evaluate", "held-out evaluation: PR curve, AUC, P@N", {"pred", "gold", "out", "trapezoid"},
       {"pred", "gold", "out"}},
      {"export-topn", "export the top-N predictions for manual rating",
       {"pred", "gold", "n", "out"}, {"pred", "gold", "out"}},
  };
}

inline std::string flag_name(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

namespace internal {

inline std::unique_ptr<CLI::App> build_app(RunConfig& cfg, const std::vector<Command>& cmds,
                                           std::vector<std::pair<CLI::App*, const Command*>>& subs,
                                           std::string& config_path) {
  auto app = std::make_unique<CLI::App>("Transformer relation extraction with bag-level "
                                        "selective attention",
                                        "distre");
  app->require_subcommand(1);
  for (const auto& cmd : cmds) {
    CLI::App* sub = app->add_subcommand(cmd.name, cmd.description);
    sub->add_option("--config", config_path, "run config file; flags override its values");
    auto fields = cfg.fields();
    for (const auto& key : cmd.keys) {
      RunConfig::Field* f = cfg.find(key, fields);
      std::visit(
          [&](auto* p) {
            using P = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<P, bool>) {
              sub->add_flag(flag_name(key), *p, f->help);
            } else {
              sub->add_option(flag_name(key), *p, f->help);
            }
          },
          f->slot);
    }
    subs.emplace_back(sub, &cmd);
  }
  return app;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(detail::concat("cannot open ", path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline void apply_preset(RunConfig& cfg, const std::set<std::string>& explicit_keys) {
  if (cfg.preset == "desk") return;
  if (cfg.preset != "full") {
    throw ConfigError(detail::concat("unknown preset \"", cfg.preset, "\" (expected desk or full)"));
  }
  const ModelConfig full = ModelConfig::full_scale(cfg.model.vocab_size, cfg.model.relations);
  if (!explicit_keys.count("layers")) cfg.model.layers = full.layers;
  if (!explicit_keys.count("heads")) cfg.model.heads = full.heads;
  if (!explicit_keys.count("width")) cfg.model.width = full.width;
  if (!explicit_keys.count("ff_width")) cfg.model.ff_width = full.ff_width;
  if (!explicit_keys.count("context")) cfg.model.context = full.context;
}

inline std::string sibling_config(const std::string& path) { return path + ".run_config.txt"; }

inline void copy_file(const fs::path& from, const fs::path& to) {
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

// ------------------------------------------------------------ subcommands

inline void bpe_train(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  const auto corpus = read_lines(cfg.corpus);
  const bpe::Vocab vocab = bpe::learn_bpe(corpus, cfg.vocab_size);
  bpe::save_vocab(vocab, cfg.out);
  cfg.save_file(sibling_config(cfg.out), cmd.keys);
  out << "vocab: " << vocab.size() << " tokens, " << vocab.merges().size() << " merges -> "
      << cfg.out << '\n';
}

inline void gen_synthetic(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  const SyntheticSpec spec = load_synthetic_spec(cfg.spec);
  const SyntheticCorpus corpus = write_synthetic(spec, cfg.out);
  fs::copy_file(cfg.spec, fs::path(cfg.out) / "spec.txt", fs::copy_options::overwrite_existing);
  cfg.save_file((fs::path(cfg.out) / "run_config.txt").string(), cmd.keys);
  out << "synthetic: " << corpus.train.size() << " train / " << corpus.test.size()
      << " test sentences, " << corpus.labels.size() << " labels -> " << cfg.out << '\n';
}

struct LoadedModel {
  ModelConfig config;
  Parameters<float> params;
  bpe::Vocab vocab;
  bool lm_only = true;
};

// Model from --init (vocab from the checkpoint unless --vocab is given) or a
// fresh initialization from --vocab and the size flags.
inline LoadedModel load_or_init(RunConfig& cfg, std::size_t relations, Rng& rng) {
  LoadedModel m;
  if (!cfg.init.empty()) {
    auto ck = load_checkpoint<float>(cfg.init);
    m.config = ck.config;
    m.params = std::move(ck.params);
    m.lm_only = ck.meta["stage"] == "lm";
    const std::string vocab_path =
        cfg.vocab.empty() ? (fs::path(cfg.init) / "vocab.txt").string() : cfg.vocab;
    m.vocab = bpe::load_vocab(vocab_path);
    if (m.vocab.size() != m.config.vocab_size) {
      throw ConfigError(detail::concat("vocab has ", m.vocab.size(), " tokens but checkpoint expects ",
                                       m.config.vocab_size));
    }
  } else {
    if (cfg.vocab.empty()) throw UsageError("missing required flag --vocab (or --init)");
    m.vocab = bpe::load_vocab(cfg.vocab);
    m.config = cfg.model;
    m.config.vocab_size = m.vocab.size();
    m.config.relations = relations;
    m.config.validate();
    m.params = Parameters<float>::initialized(m.config, rng);
  }
  return m;
}

inline void pretrain_lm_cmd(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  cfg.training.validate();
  Rng rng(cfg.training.seed);
  LoadedModel m = load_or_init(cfg, 1, rng);
  const auto windows = lm_windows(m.vocab, read_lines(cfg.corpus), m.config.context);
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  const std::string metrics_path = cfg.metrics.empty() ? (dir / "metrics.csv").string() : cfg.metrics;
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw DataError(detail::concat("cannot write ", metrics_path));
  out << "pretrain: " << windows.size() << " windows, initial perplexity "
      << std::exp(mean_lm_loss(m.params, m.config, windows)) << '\n';
  const std::map<std::string, std::string> meta = {{"stage", m.lm_only ? "lm" : "finetuned"}};
  pretrain_lm<float>(windows, m.params, m.config, cfg.training, rng, &metrics,
                     [&](std::size_t epoch, const Parameters<float>& p) {
                       save_checkpoint(dir, cfg.training.apply_dropout(m.config), p, meta);
                       out << "epoch " << epoch + 1 << " done\n";
                     });
  bpe::save_vocab(m.vocab, (dir / "vocab.txt").string());
  cfg.save_file((dir / "run_config.txt").string(), cmd.keys);
  out << "pretrain: final perplexity " << std::exp(mean_lm_loss(m.params, m.config, windows))
      << " -> " << cfg.out << '\n';
}

inline void finetune_cmd(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  cfg.training.validate();
  LabelTable labels = load_label_table(cfg.labels);
  const auto examples = load_jsonl(cfg.train, labels, cfg.allow_new_labels);
  Rng rng(cfg.training.seed);
  LoadedModel m = load_or_init(cfg, labels.size(), rng);
  prepare_relation_head(m.params, m.config, labels.size(), m.lm_only, rng);

  std::vector<EncodedBag> bags;
  for (const auto& bag : build_bags(examples, BagMode::kTrain)) {
    bags.push_back(encode_bag(m.vocab, bag, m.config.context, cfg.max_bag_sentences));
  }
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  const std::string metrics_path = cfg.metrics.empty() ? (dir / "metrics.csv").string() : cfg.metrics;
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw DataError(detail::concat("cannot write ", metrics_path));
  out << "finetune: " << bags.size() << " bags, " << labels.size() << " labels\n";
  const std::map<std::string, std::string> meta = {{"stage", "finetuned"}};
  const auto stats = finetune<float>(
      bags, m.params, m.config, cfg.training, m.vocab.specials().clf, rng, &metrics,
      [&](std::size_t epoch, const Parameters<float>& p) {
        save_checkpoint(dir, cfg.training.apply_dropout(m.config), p, meta);
        out << "epoch " << epoch + 1 << " done\n";
      });
  bpe::save_vocab(m.vocab, (dir / "vocab.txt").string());
  save_label_table(labels, (dir / "labels.txt").string());
  cfg.save_file((dir / "run_config.txt").string(), cmd.keys);
  out << "finetune: final epoch loss " << stats.back().mean_loss << ", bag accuracy "
      << stats.back().metric << " -> " << cfg.out << '\n';
}

inline std::vector<eval::BagPrediction> predict_bags(const Parameters<float>& params,
                                                     const ModelConfig& config,
                                                     const bpe::Vocab& vocab,
                                                     const LabelTable& labels,
                                                     const std::vector<Bag>& bags,
                                                     std::size_t max_bag_sentences) {
  std::vector<eval::BagPrediction> preds;
  for (const auto& bag : bags) {
    const EncodedBag enc = encode_bag(vocab, bag, config.context, max_bag_sentences);
    for (const auto& rs : mil::predict_bag(params, config, enc, vocab.specials().clf)) {
      eval::BagPrediction p;
      p.head = bag.head;
      p.tail = bag.tail;
      p.relation = labels.name(rs.relation);
      p.score = rs.score;
      p.alphas = rs.alphas;
      preds.push_back(std::move(p));
    }
  }
  return preds;
}

inline void predict_cmd(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  const fs::path dir(cfg.checkpoint);
  const auto ck = load_checkpoint<float>(dir);
  const bpe::Vocab vocab = bpe::load_vocab((dir / "vocab.txt").string());
  LabelTable labels = load_label_table((dir / "labels.txt").string());
  if (labels.size() != ck.config.relations) {
    throw ConfigError(detail::concat("checkpoint has ", ck.config.relations,
                                     " relations but its label table has ", labels.size()));
  }
  LabelTable test_labels = labels;
  const auto examples = load_jsonl(cfg.test, test_labels, true);
  const auto bags = build_bags(examples, BagMode::kTest);
  const auto preds = predict_bags(ck.params, ck.config, vocab, labels, bags, cfg.max_bag_sentences);
  eval::save_predictions(preds, cfg.out);
  cfg.save_file(sibling_config(cfg.out), cmd.keys);
  out << "predict: " << bags.size() << " entity pairs, " << preds.size() << " predictions -> "
      << cfg.out << '\n';
}

inline void evaluate_cmd(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  const auto preds = eval::load_predictions(cfg.pred);
  LabelTable labels;
  const auto gold_examples = load_jsonl(cfg.gold, labels, true);
  const auto report = eval::evaluate(preds, eval::gold_facts(gold_examples, labels));
  eval::write_report(report, cfg.out, cfg.trapezoid);
  cfg.save_file((fs::path(cfg.out) / "run_config.txt").string(), cmd.keys);
  out << "evaluate: AUC " << (cfg.trapezoid ? report.auc_trapezoid : report.auc) << " over "
      << report.total_facts << " gold facts";
  for (const auto& [n, p] : report.p_at) out << ", P@" << n << ' ' << 100.0 * p;
  out << '\n';
}

inline void export_topn_cmd(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  const auto ranked = eval::rank_predictions(eval::load_predictions(cfg.pred));
  LabelTable labels;
  const auto bags = build_bags(load_jsonl(cfg.gold, labels, true), BagMode::kTest);
  eval::export_topn(ranked, bags, cfg.n, cfg.out);
  cfg.save_file(sibling_config(cfg.out), cmd.keys);
  out << "export-topn: top " << std::min(cfg.n, ranked.size()) << " -> " << cfg.out << '\n';
}

inline void dispatch(RunConfig& cfg, const Command& cmd, std::ostream& out) {
  if (cmd.name == "bpe-train") bpe_train(cfg, cmd, out);
  else if (cmd.name == "gen-synthetic") gen_synthetic(cfg, cmd, out);
  else if (cmd.name == "pretrain-lm") pretrain_lm_cmd(cfg, cmd, out);
  else if (cmd.name == "finetune") finetune_cmd(cfg, cmd, out);
  else if (cmd.name == "predict") predict_cmd(cfg, cmd, out);
  else if (cmd.name == "evaluate") evaluate_cmd(cfg, cmd, out);
  else if (cmd.name == "export-topn") export_topn_cmd(cfg, cmd, out);
}

}  // namespace internal

// Entry point. Exit codes: 0 success, 1 data error, 2 usage/configuration error.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const std::vector<Command> cmds = commands();
  std::vector<const char*> argv{"distre"};
  for (const auto& a : args) argv.push_back(a.c_str());
  const int argc = static_cast<int>(argv.size());

  RunConfig cfg;
  std::string config_path;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  auto app = internal::build_app(cfg, cmds, subs, config_path);
  try {
    app->parse(argc, argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app->help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const bool help = e.get_exit_code() == 0;
    (help ? out : err) << (help ? app->help() : std::string(e.what()) + "\n");
    if (!help) err << "run 'distre --help' for usage\n";
    return help ? kExitOk : kExitUsageError;
  }

  try {
    std::set<std::string> explicit_keys;
    if (!config_path.empty()) {
      // Reload: config file values first, then command-line flags on top.
      RunConfig from_file;
      explicit_keys = from_file.load_file(config_path);
      cfg = from_file;
      subs.clear();
      std::string ignored;
      app = internal::build_app(cfg, cmds, subs, ignored);
      app->parse(argc, argv.data());
    }
    const Command* cmd = nullptr;
    CLI::App* sub = nullptr;
    for (auto [s, c] : subs) {
      if (s->parsed()) {
        sub = s;
        cmd = c;
      }
    }
    if (!cmd) throw UsageError("no subcommand given");
    for (const auto& key : cmd->keys) {
      if (sub->count(flag_name(key)) > 0) explicit_keys.insert(key);
    }
    cfg.command = cmd->name;
    for (const auto& key : cmd->required) {
      if (cfg.get(key).empty()) throw UsageError(detail::concat("missing required flag ", flag_name(key)));
    }
    internal::apply_preset(cfg, explicit_keys);
    internal::dispatch(cfg, *cmd, out);
    return kExitOk;
  } catch (const Error& e) {
    err << "distre: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::kDataError:
      case ErrorKind::kInputError:
        return kExitDataError;
      default:
        return kExitUsageError;
    }
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitUsageError;
  } catch (const std::exception& e) {
    err << "distre: " << e.what() << '\n';
    return kExitDataError;
  }
}

}  // namespace distre::cli

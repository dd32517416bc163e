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

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "distre/error.hpp"
#include "distre/model.hpp"
#include "distre/trainer.hpp"

namespace distre {

// Everything a CLI run depends on. Serialized as "key = value" lines next to
// every artifact; loading that file back reproduces the run.
struct RunConfig {
  std::string command;

  std::string corpus, vocab, train, test, labels, init, out, pred, gold, spec, metrics;
  std::string checkpoint;

  std::string preset = "desk";
  ModelConfig model;
  std::size_t vocab_size = 8192;  // BPE target size
  TrainConfig training;

  std::size_t n = 300;
  bool trapezoid = false;
  bool allow_new_labels = false;
  std::size_t max_bag_sentences = kDefaultMaxBagSentences;

  // Seeds share the size slot; both are 64-bit unsigned on supported targets.
  static_assert(std::is_same_v<std::size_t, std::uint64_t>);
  using Slot = std::variant<std::string*, std::size_t*, double*, bool*>;
  struct Field {
    std::string key;
    Slot slot;
    std::string help;
  };

  std::vector<Field> fields() {
    return {
        {"corpus", &corpus, "text corpus, one sentence per line"},
        {"vocab", &vocab, "BPE vocabulary file"},
        {"train", &train, "training JSON-lines file"},
        {"test", &test, "test JSON-lines file"},
        {"labels", &labels, "label table (one relation per line, NA first)"},
        {"init", &init, "checkpoint directory to start from"},
        {"checkpoint", &checkpoint, "checkpoint directory"},
        {"out", &out, "output path"},
        {"pred", &pred, "prediction JSON-lines file"},
        {"gold", &gold, "gold JSON-lines file (test split)"},
        {"spec", &spec, "synthetic corpus spec"},
        {"metrics", &metrics, "per-step metrics CSV (default: inside the output directory)"},
        {"preset", &preset, "model size preset: desk or full"},
        {"layers", &model.layers, "decoder blocks"},
        {"heads", &model.heads, "attention heads"},
        {"width", &model.width, "state width"},
        {"ff_width", &model.ff_width, "feedforward width"},
        {"context", &model.context, "maximum sequence length"},
        {"vocab_size", &vocab_size, "target BPE vocabulary size"},
        {"lr", &training.lr_peak, "peak learning rate"},
        {"beta1", &training.beta1, "Adam beta1"},
        {"beta2", &training.beta2, "Adam beta2"},
        {"adam_eps", &training.adam_eps, "Adam epsilon"},
        {"batch_size", &training.batch_size, "sequences (LM) or bags (fine-tuning) per update"},
        {"epochs", &training.epochs, "training epochs"},
        {"warmup_fraction", &training.warmup_fraction, "share of updates spent warming up"},
        {"lambda", &training.lambda, "weight of the auxiliary LM loss"},
        {"seed", &training.seed, "random seed"},
        {"clip_norm", &training.clip_norm, "gradient norm clip (0 = off)"},
        {"dropout_residual", &training.dropout_residual, "residual dropout"},
        {"dropout_attention", &training.dropout_attention, "attention dropout"},
        {"dropout_classifier", &training.dropout_classifier, "classifier dropout"},
        {"n", &n, "number of top predictions"},
        {"trapezoid", &trapezoid, "report trapezoidal AUC instead of average precision"},
        {"allow_new_labels", &allow_new_labels, "extend the label table with unseen relations"},
        {"max_bag_sentences", &max_bag_sentences, "sentences kept per bag"},
    };
  }

  Field* find(const std::string& key, std::vector<Field>& all) {
    for (auto& f : all)
      if (f.key == key) return &f;
    return nullptr;
  }

  void set(const std::string& key, const std::string& value) {
    auto all = fields();
    Field* f = find(key, all);
    if (!f) throw ConfigError(detail::concat("config: unknown key \"", key, "\""));
    try {
      std::visit(
          [&](auto* p) {
            using P = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<P, std::string>) {
              *p = value;
            } else if constexpr (std::is_same_v<P, bool>) {
              if (value == "true" || value == "1") *p = true;
              else if (value == "false" || value == "0") *p = false;
              else throw std::invalid_argument(value);
            } else if constexpr (std::is_same_v<P, double>) {
              std::size_t used = 0;
              *p = std::stod(value, &used);
              if (used != value.size()) throw std::invalid_argument(value);
            } else {
              if (value.find('-') != std::string::npos) throw std::invalid_argument(value);
              std::size_t used = 0;
              *p = static_cast<P>(std::stoull(value, &used));
              if (used != value.size()) throw std::invalid_argument(value);
            }
          },
          f->slot);
    } catch (const std::invalid_argument&) {
      throw ConfigError(detail::concat("config: bad value \"", value, "\" for ", key));
    } catch (const std::out_of_range&) {
      throw ConfigError(detail::concat("config: value \"", value, "\" out of range for ", key));
    }
  }

  std::string get(const std::string& key) {
    auto all = fields();
    Field* f = find(key, all);
    if (!f) throw ConfigError(detail::concat("config: unknown key \"", key, "\""));
    return std::visit(
        [](auto* p) -> std::string {
          using P = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<P, std::string>) {
            return *p;
          } else if constexpr (std::is_same_v<P, bool>) {
            return *p ? "true" : "false";
          } else if constexpr (std::is_same_v<P, double>) {
            std::ostringstream oss;
            oss.precision(17);
            oss << *p;
            return oss.str();
          } else {
            return std::to_string(*p);
          }
        },
        f->slot);
  }

  // Reads "key = value" lines; returns the keys that were set.
  std::set<std::string> load(std::istream& is) {
    std::set<std::string> keys;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(detail::concat("config line ", line_no, ": expected key = value"));
      }
      auto strip = [](std::string s) {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string::npos) return std::string();
        return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
      };
      const std::string key = strip(line.substr(0, eq));
      const std::string value = strip(line.substr(eq + 1));
      if (key == "command") {
        command = value;
      } else {
        set(key, value);
        keys.insert(key);
      }
    }
    return keys;
  }

  std::set<std::string> load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(detail::concat("cannot open config file ", path));
    return load(is);
  }

  void save(std::ostream& os, const std::vector<std::string>& keys) {
    os << "command = " << command << '\n';
    for (const auto& k : keys) os << k << " = " << get(k) << '\n';
  }

  void save_file(const std::string& path, const std::vector<std::string>& keys) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError(detail::concat("cannot write run config ", path));
    save(os, keys);
  }
};

}  // namespace distre

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

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "distre/data.hpp"
#include "distre/error.hpp"
#include "distre/random.hpp"

namespace distre {

// Declarative description of a synthetic distantly supervised corpus.
//
// Text format, one "key = value" per line, '#' starts a comment:
//   seed = 7
//   noise = 0.3                 # fraction of distractor sentences in positive bags
//   train_bags = 2000
//   test_bags = 500
//   na_fraction = 0.3           # share of bags whose pair has no relation
//   max_expressing = 2          # sentences stating the relation per positive bag
//   generated_entities = 400    # pseudo-random names added to the entity pool
//   pretrain_sentences = 0      # extra unlabeled sentences for LM pretraining
//   entity = Alice              # explicit pool entries
//   relation = /people/person/place_of_birth
//   template = HEAD was born in TAIL .      # attaches to the last relation
//   distractor = HEAD met TAIL {once|twice} .
// Templates use HEAD/TAIL slots and {a|b|c} alternatives.
struct SyntheticSpec {
  struct Relation {
    std::string name;
    std::vector<std::string> templates;
  };

  std::uint64_t seed = 7;
  double noise = 0.3;
  std::size_t train_bags = 2000;
  std::size_t test_bags = 500;
  double na_fraction = 0.3;
  std::size_t max_expressing = 2;
  std::size_t generated_entities = 0;
  std::size_t pretrain_sentences = 0;
  std::vector<std::string> entities;
  std::vector<Relation> relations;
  std::vector<std::string> distractors;

  void validate() const {
    if (relations.size() < 2) {
      throw ConfigError("synthetic spec: need at least 2 relations besides NA");
    }
    for (const auto& r : relations) {
      if (r.templates.empty()) {
        throw ConfigError(detail::concat("synthetic spec: relation ", r.name, " has no templates"));
      }
    }
    if (distractors.empty()) throw ConfigError("synthetic spec: no distractor templates");
    if (entities.size() + generated_entities < 2) {
      throw ConfigError("synthetic spec: need at least 2 entities");
    }
    if (!(noise >= 0.0 && noise < 1.0)) {
      throw ConfigError(detail::concat("synthetic spec: noise ", noise, " outside [0, 1)"));
    }
    if (!(na_fraction >= 0.0 && na_fraction < 1.0)) {
      throw ConfigError(detail::concat("synthetic spec: na_fraction ", na_fraction,
                                       " outside [0, 1)"));
    }
    if (max_expressing == 0) throw ConfigError("synthetic spec: max_expressing must be >= 1");
  }
};

namespace internal {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string expand_alternatives(const std::string& pattern, Rng& rng) {
  std::string out;
  std::size_t i = 0;
  while (i < pattern.size()) {
    if (pattern[i] != '{') {
      out += pattern[i++];
      continue;
    }
    const auto close = pattern.find('}', i);
    if (close == std::string::npos) {
      throw ConfigError(detail::concat("synthetic spec: unbalanced '{' in \"", pattern, "\""));
    }
    std::vector<std::string> options;
    std::stringstream ss(pattern.substr(i + 1, close - i - 1));
    std::string opt;
    while (std::getline(ss, opt, '|')) options.push_back(opt);
    if (!options.empty()) out += options[uniform_index(rng, options.size())];
    i = close + 1;
  }
  return out;
}

inline std::string fill_slots(std::string text, const std::string& head, const std::string& tail) {
  // Placeholders first so entity names containing HEAD/TAIL are not rewritten.
  auto replace_all = [](std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
      s.replace(pos, from.size(), to);
  };
  replace_all(text, "HEAD", "\x01");
  replace_all(text, "TAIL", "\x02");
  replace_all(text, "\x01", head);
  replace_all(text, "\x02", tail);
  return text;
}

inline std::vector<std::string> generate_names(std::size_t count, Rng& rng,
                                               const std::set<std::string>& taken) {
  static const char* const onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p",
                                       "r", "s", "t", "v", "z", "br", "tr", "st", "sh"};
  static const char* const vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  static const char* const codas[] = {"", "", "n", "r", "s", "l", "th"};
  std::set<std::string> seen = taken;
  std::vector<std::string> names;
  while (names.size() < count) {
    const std::size_t syllables = 2 + uniform_index(rng, 2);
    std::string name;
    for (std::size_t s = 0; s < syllables; ++s) {
      name += onsets[uniform_index(rng, std::size(onsets))];
      name += vowels[uniform_index(rng, std::size(vowels))];
      name += codas[uniform_index(rng, std::size(codas))];
    }
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    if (seen.insert(name).second) names.push_back(name);
  }
  return names;
}

}  // namespace internal

inline SyntheticSpec parse_synthetic_spec(std::istream& is) {
  SyntheticSpec spec;
  std::string line;
  std::size_t line_no = 0;
  auto number = [&](const std::string& v, const std::string& key) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(detail::concat("synthetic spec line ", line_no, ": ", key,
                                       " expects a number, got \"", v, "\""));
    }
  };
  auto count = [&](const std::string& v, const std::string& key) {
    const double d = number(v, key);
    if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d))) {
      throw ConfigError(detail::concat("synthetic spec line ", line_no, ": ", key,
                                       " expects a non-negative integer"));
    }
    return static_cast<std::uint64_t>(d);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = internal::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(detail::concat("synthetic spec line ", line_no, ": expected key = value"));
    }
    const std::string key = internal::trim(line.substr(0, eq));
    const std::string value = internal::trim(line.substr(eq + 1));
    if (key == "seed") spec.seed = count(value, key);
    else if (key == "noise") spec.noise = number(value, key);
    else if (key == "train_bags") spec.train_bags = count(value, key);
    else if (key == "test_bags") spec.test_bags = count(value, key);
    else if (key == "na_fraction") spec.na_fraction = number(value, key);
    else if (key == "max_expressing") spec.max_expressing = count(value, key);
    else if (key == "generated_entities") spec.generated_entities = count(value, key);
    else if (key == "pretrain_sentences") spec.pretrain_sentences = count(value, key);
    else if (key == "entity") spec.entities.push_back(value);
    else if (key == "relation") spec.relations.push_back({value, {}});
    else if (key == "template") {
      if (spec.relations.empty()) {
        throw ConfigError(detail::concat("synthetic spec line ", line_no,
                                         ": template before any relation"));
      }
      spec.relations.back().templates.push_back(value);
    } else if (key == "distractor") spec.distractors.push_back(value);
    else {
      throw ConfigError(detail::concat("synthetic spec line ", line_no, ": unknown key \"",
                                       key, "\""));
    }
  }
  return spec;
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(detail::concat("cannot open synthetic spec ", path));
  return parse_synthetic_spec(is);
}

struct SyntheticCorpus {
  LabelTable labels;
  std::vector<SentenceExample> train;
  std::vector<SentenceExample> test;
  std::vector<std::string> unlabeled;  // extra pretraining text, no labels
};

// Positive bags hold 1..max_expressing sentences instantiating a template of
// the bag's relation; each is followed by a geometric number of distractor
// sentences (continuation probability = noise), so distractors make up a
// `noise` share of positive-bag sentences. NA bags hold distractors only.
// Every sentence carries the bag's distant label. Pairs are unique across
// both splits.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticCorpus corpus;
  for (const auto& r : spec.relations) corpus.labels.add(r.name);

  std::vector<std::string> entities = spec.entities;
  const auto generated = internal::generate_names(
      spec.generated_entities, rng, std::set<std::string>(entities.begin(), entities.end()));
  entities.insert(entities.end(), generated.begin(), generated.end());

  const std::size_t total = spec.train_bags + spec.test_bags;
  const std::size_t max_pairs = entities.size() * (entities.size() - 1);
  if (total > max_pairs) {
    throw ConfigError(detail::concat("synthetic spec: ", total, " bags need more than the ",
                                     max_pairs, " available entity pairs"));
  }

  std::set<std::pair<std::size_t, std::size_t>> used;
  auto emit_bag = [&](std::vector<SentenceExample>& out) {
    std::size_t h = 0, t = 0;
    do {
      h = uniform_index(rng, entities.size());
      t = uniform_index(rng, entities.size());
    } while (h == t || used.count({h, t}));
    used.insert({h, t});
    const std::string& head = entities[h];
    const std::string& tail = entities[t];

    std::vector<SentenceExample> bag;
    auto sentence = [&](const std::string& pattern, int relation, bool expresses) {
      SentenceExample ex;
      ex.text = internal::fill_slots(internal::expand_alternatives(pattern, rng), head, tail);
      ex.head = head;
      ex.tail = tail;
      ex.relation = relation;
      ex.expresses = expresses;
      bag.push_back(std::move(ex));
    };
    auto distractor = [&](int relation) {
      sentence(spec.distractors[uniform_index(rng, spec.distractors.size())], relation, false);
    };

    if (uniform01(rng) < spec.na_fraction) {
      const std::size_t n = 1 + uniform_index(rng, spec.max_expressing + 1);
      for (std::size_t i = 0; i < n; ++i) distractor(0);
    } else {
      const std::size_t r = uniform_index(rng, spec.relations.size());
      const int relation = static_cast<int>(r) + 1;
      const auto& templates = spec.relations[r].templates;
      const std::size_t expressing = 1 + uniform_index(rng, spec.max_expressing);
      for (std::size_t i = 0; i < expressing; ++i) {
        sentence(templates[uniform_index(rng, templates.size())], relation, true);
        while (bag.size() < kDefaultMaxBagSentences && uniform01(rng) < spec.noise) {
          distractor(relation);
        }
      }
    }
    shuffle_in_place(bag, rng);
    out.insert(out.end(), bag.begin(), bag.end());
  };

  for (std::size_t i = 0; i < spec.train_bags; ++i) emit_bag(corpus.train);
  for (std::size_t i = 0; i < spec.test_bags; ++i) emit_bag(corpus.test);

  // Unlabeled text: templates and distractors over arbitrary pairs, in the
  // same proportion as positive bags. Drawn last so the labeled splits do not
  // depend on it.
  for (std::size_t i = 0; i < spec.pretrain_sentences; ++i) {
    std::size_t h = 0, t = 0;
    do {
      h = uniform_index(rng, entities.size());
      t = uniform_index(rng, entities.size());
    } while (h == t);
    std::string pattern;
    if (uniform01(rng) < spec.noise) {
      pattern = spec.distractors[uniform_index(rng, spec.distractors.size())];
    } else {
      const auto& templates = spec.relations[uniform_index(rng, spec.relations.size())].templates;
      pattern = templates[uniform_index(rng, templates.size())];
    }
    corpus.unlabeled.push_back(
        internal::fill_slots(internal::expand_alternatives(pattern, rng), entities[h], entities[t]));
  }
  return corpus;
}

inline void write_jsonl(const std::vector<SentenceExample>& examples, const LabelTable& labels,
                        const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(detail::concat("cannot write ", path));
  for (const auto& ex : examples) os << to_json(ex, labels).dump() << '\n';
  if (!os) throw DataError(detail::concat("failed writing ", path));
}

// Writes train.jsonl, test.jsonl, labels.txt and corpus.txt (training
// sentences followed by the unlabeled sentences, one per line, for LM
// pretraining) into out_dir.
inline SyntheticCorpus write_synthetic(const SyntheticSpec& spec,
                                       const std::filesystem::path& out_dir) {
  SyntheticCorpus corpus = generate_synthetic(spec);
  std::filesystem::create_directories(out_dir);
  write_jsonl(corpus.train, corpus.labels, (out_dir / "train.jsonl").string());
  write_jsonl(corpus.test, corpus.labels, (out_dir / "test.jsonl").string());
  save_label_table(corpus.labels, (out_dir / "labels.txt").string());
  std::ofstream os(out_dir / "corpus.txt", std::ios::binary);
  if (!os) throw DataError(detail::concat("cannot write ", (out_dir / "corpus.txt").string()));
  for (const auto& ex : corpus.train) os << ex.text << '\n';
  for (const auto& line : corpus.unlabeled) os << line << '\n';
  if (!os) throw DataError(detail::concat("failed writing ", (out_dir / "corpus.txt").string()));
  return corpus;
}

}  // namespace distre

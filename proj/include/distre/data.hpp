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
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "distre/bpe.hpp"
#include "distre/error.hpp"
#include "distre/random.hpp"
#include "distre/tensor.hpp"

namespace distre {

inline constexpr std::string_view kNoRelation = "NA";

// Relation names by id; id 0 is always NA.
class LabelTable {
 public:
  LabelTable() { add(std::string(kNoRelation)); }

  explicit LabelTable(const std::vector<std::string>& names) {
    if (names.empty() || names.front() != kNoRelation) {
      throw DataError("label table: first entry must be NA");
    }
    for (const auto& n : names) {
      if (ids_.count(n)) throw DataError(detail::concat("label table: duplicate relation ", n));
      add(n);
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::optional<int> find(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  int add(const std::string& name) {
    if (auto id = find(name)) return *id;
    const int id = static_cast<int>(names_.size());
    ids_.emplace(name, id);
    names_.push_back(name);
    return id;
  }

  friend bool operator==(const LabelTable& a, const LabelTable& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

inline LabelTable load_label_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError(detail::concat("cannot open label table ", path));
  std::vector<std::string> names;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    names.push_back(line);
  }
  return LabelTable(names);
}

inline void save_label_table(const LabelTable& table, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(detail::concat("cannot write label table ", path));
  for (const auto& n : table.names()) os << n << '\n';
}

// One distantly labeled mention.
struct SentenceExample {
  std::string text;
  std::string head;
  std::string tail;
  int relation = 0;
  std::optional<std::string> head_id;
  std::optional<std::string> tail_id;
  // Set by the synthetic generator: whether the sentence actually states the
  // relation. Absent for real corpora.
  std::optional<bool> expresses;
};

inline nlohmann::ordered_json to_json(const SentenceExample& ex, const LabelTable& labels) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  out["text"] = ex.text;
  out["head"] = ex.head;
  out["tail"] = ex.tail;
  out["relation"] = labels.name(ex.relation);
  if (ex.head_id) out["head_id"] = *ex.head_id;
  if (ex.tail_id) out["tail_id"] = *ex.tail_id;
  if (ex.expresses) out["expresses"] = *ex.expresses;
  return out;
}

inline SentenceExample parse_example(const std::string& line, std::size_t line_no,
                                     LabelTable& labels, bool allow_new_labels) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(detail::concat("line ", line_no, ": malformed JSON (", e.what(), ")"));
  }
  if (!j.is_object()) throw DataError(detail::concat("line ", line_no, ": expected an object"));
  auto field = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end()) {
      throw DataError(detail::concat("line ", line_no, ": missing field \"", key, "\""));
    }
    if (!it->is_string()) {
      throw DataError(detail::concat("line ", line_no, ": field \"", key, "\" is not a string"));
    }
    return it->get<std::string>();
  };
  SentenceExample ex;
  ex.text = field("text");
  ex.head = field("head");
  ex.tail = field("tail");
  if (ex.head.empty() || ex.tail.empty()) {
    throw DataError(detail::concat("line ", line_no, ": empty head or tail entity"));
  }
  const std::string rel = field("relation");
  if (auto id = labels.find(rel)) {
    ex.relation = *id;
  } else if (allow_new_labels) {
    ex.relation = labels.add(rel);
  } else {
    throw DataError(detail::concat("line ", line_no, ": unknown relation \"", rel, "\""));
  }
  if (j.contains("head_id")) ex.head_id = field("head_id");
  if (j.contains("tail_id")) ex.tail_id = field("tail_id");
  if (auto it = j.find("expresses"); it != j.end() && it->is_boolean()) {
    ex.expresses = it->get<bool>();
  }
  return ex;
}

// Reads JSON lines; blank lines are skipped but still counted for messages.
inline std::vector<SentenceExample> load_jsonl(std::istream& is, LabelTable& labels,
                                               bool allow_new_labels = false) {
  std::vector<SentenceExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_example(line, line_no, labels, allow_new_labels));
  }
  return out;
}

inline std::vector<SentenceExample> load_jsonl(const std::string& path, LabelTable& labels,
                                               bool allow_new_labels = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(detail::concat("cannot open dataset ", path));
  try {
    return load_jsonl(is, labels, allow_new_labels);
  } catch (const DataError& e) {
    throw DataError(detail::concat(path, ": ", e.what()));
  }
}

enum class BagMode { kTrain, kTest };

// Sentences sharing an entity pair (and, in train mode, a relation).
struct Bag {
  std::string head;
  std::string tail;
  int label = 0;              // train mode: the bag's relation
  std::vector<int> gold;      // test mode: sorted non-NA relations of the pair
  std::vector<SentenceExample> sentences;
};

inline std::vector<Bag> build_bags(const std::vector<SentenceExample>& examples, BagMode mode) {
  std::vector<Bag> bags;
  std::map<std::tuple<std::string, std::string, int>, std::size_t> index;
  for (const auto& ex : examples) {
    const int rel_key = mode == BagMode::kTrain ? ex.relation : -1;
    auto [it, inserted] = index.try_emplace({ex.head, ex.tail, rel_key}, bags.size());
    if (inserted) {
      Bag b;
      b.head = ex.head;
      b.tail = ex.tail;
      b.label = mode == BagMode::kTrain ? ex.relation : 0;
      bags.push_back(std::move(b));
    }
    Bag& bag = bags[it->second];
    bag.sentences.push_back(ex);
    if (mode == BagMode::kTest && ex.relation != 0 &&
        std::find(bag.gold.begin(), bag.gold.end(), ex.relation) == bag.gold.end()) {
      bag.gold.insert(std::upper_bound(bag.gold.begin(), bag.gold.end(), ex.relation),
                      ex.relation);
    }
  }
  return bags;
}

// START head DELIM tail DELIM sentence CLF. Only the sentence portion is
// truncated (from the right) to fit max_len.
inline std::vector<int> format_input(const bpe::Vocab& vocab, const std::string& head,
                                     const std::string& tail, const std::string& text,
                                     std::size_t max_len) {
  const auto& sp = vocab.specials();
  if (sp.clf < 0) throw ConfigError("format_input: vocabulary has no special tokens");
  std::vector<int> ids{sp.start};
  const auto h = bpe::encode(vocab, head);
  ids.insert(ids.end(), h.begin(), h.end());
  ids.push_back(sp.delim);
  const auto t = bpe::encode(vocab, tail);
  ids.insert(ids.end(), t.begin(), t.end());
  ids.push_back(sp.delim);
  if (ids.size() + 1 > max_len) {
    throw DataError(detail::concat("format_input: entity prefix of ", ids.size(),
                                   " tokens leaves no room within ", max_len, " tokens"));
  }
  const auto s = bpe::encode(vocab, text);
  const std::size_t room = max_len - ids.size() - 1;
  ids.insert(ids.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(std::min(room, s.size())));
  ids.push_back(sp.clf);
  return ids;
}

inline std::vector<int> format_input(const bpe::Vocab& vocab, const SentenceExample& ex,
                                     std::size_t max_len) {
  return format_input(vocab, ex.head, ex.tail, ex.text, max_len);
}

inline constexpr std::size_t kDefaultMaxBagSentences = 64;

// Model-ready bag: formatted sequences plus the training label.
struct EncodedBag {
  std::vector<std::vector<int>> sequences;
  int label = 0;
};

inline EncodedBag encode_bag(const bpe::Vocab& vocab, const Bag& bag, std::size_t max_len,
                             std::size_t max_sentences = kDefaultMaxBagSentences) {
  EncodedBag out;
  out.label = bag.label;
  const std::size_t n = std::min(bag.sentences.size(), max_sentences);
  for (std::size_t i = 0; i < n; ++i) {
    out.sequences.push_back(format_input(vocab, bag.sentences[i], max_len));
  }
  return out;
}

// All sequences of a group of bags padded to a common width.
struct PaddedBatch {
  std::vector<std::size_t> bag_indices;
  std::vector<std::size_t> first_row;  // per bag, index of its first row
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<int> ids;       // rows x width
  LossMask mask;              // rows x width, 0 on padding

  std::span<const int> row(std::size_t r) const {
    return std::span<const int>(ids).subspan(r * width, width);
  }
  std::span<const std::uint8_t> row_mask(std::size_t r) const {
    return std::span<const std::uint8_t>(mask).subspan(r * width, width);
  }
  // Row without its padding.
  std::span<const int> unpadded(std::size_t r) const {
    std::size_t len = 0;
    for (auto m : row_mask(r)) len += m ? 1 : 0;
    return row(r).first(len);
  }
  std::size_t bag_rows(std::size_t b) const {
    return (b + 1 < first_row.size() ? first_row[b + 1] : rows) - first_row[b];
  }
};

// Deterministic epoch-wise shuffling and padding of bags.
class BagBatcher {
 public:
  BagBatcher(const std::vector<EncodedBag>& bags, std::size_t batch_size, int pad_id,
             std::uint64_t seed)
      : bags_(bags), batch_size_(batch_size), pad_id_(pad_id), seed_(seed) {
    if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
  }

  std::size_t batches_per_epoch() const {
    return (bags_.size() + batch_size_ - 1) / batch_size_;
  }

  std::vector<std::size_t> order(std::size_t epoch) const {
    std::vector<std::size_t> idx(bags_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed_, epoch));
    shuffle_in_place(idx, rng);
    return idx;
  }

  std::vector<PaddedBatch> epoch(std::size_t epoch) const {
    const auto idx = order(epoch);
    std::vector<PaddedBatch> out;
    for (std::size_t start = 0; start < idx.size(); start += batch_size_) {
      const std::size_t end = std::min(idx.size(), start + batch_size_);
      out.push_back(make_batch(std::span<const std::size_t>(idx).subspan(start, end - start)));
    }
    return out;
  }

  PaddedBatch make_batch(std::span<const std::size_t> members) const {
    PaddedBatch b;
    for (std::size_t i : members) {
      b.bag_indices.push_back(i);
      b.first_row.push_back(b.rows);
      b.rows += bags_[i].sequences.size();
      for (const auto& s : bags_[i].sequences) b.width = std::max(b.width, s.size());
    }
    b.ids.assign(b.rows * b.width, pad_id_);
    b.mask.assign(b.rows * b.width, 0);
    std::size_t r = 0;
    for (std::size_t i : members) {
      for (const auto& s : bags_[i].sequences) {
        std::copy(s.begin(), s.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.width));
        std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(r * b.width), s.size(), 1);
        ++r;
      }
    }
    return b;
  }

 private:
  const std::vector<EncodedBag>& bags_;
  std::size_t batch_size_;
  int pad_id_;
  std::uint64_t seed_;
};

}  // namespace distre

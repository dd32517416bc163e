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

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "distre/error.hpp"

namespace distre::bpe {

inline constexpr int kByteSymbols = 256;
inline constexpr int kEndOfWord = 256;
inline constexpr int kBaseSymbols = 257;
inline constexpr int kSpecialCount = 4;
inline constexpr std::string_view kEndOfWordGlyph = "\xE2\x96\x81";  // U+2581
inline constexpr std::string_view kFileMagic = "distre-bpe";
inline constexpr int kFileVersion = 1;

struct SpecialIds {
  int start = -1;
  int delim = -1;
  int clf = -1;
  int pad = -1;
};

inline constexpr std::array<std::string_view, kSpecialCount> kSpecialNames = {
    "<start>", "<delim>", "<clf>", "<pad>"};

namespace internal {

inline void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Printable, space-free rendering of every byte: printable Latin-1 bytes map
// to themselves, the rest to code points from U+0100 upwards.
inline const std::array<std::string, 256>& byte_glyphs() {
  static const std::array<std::string, 256> glyphs = [] {
    std::array<std::string, 256> g;
    std::uint32_t next = 256;
    for (std::uint32_t b = 0; b < 256; ++b) {
      const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) ||
                             (b >= 0xAE && b <= 0xFF);
      append_utf8(g[b], printable ? b : next++);
    }
    return g;
  }();
  return glyphs;
}

}  // namespace internal

// Learned byte-pair vocabulary. Ids: 0..255 raw bytes, 256 the end-of-word
// marker, then one id per distinct merge output, then the special tokens.
// Immutable once built.
class Vocab {
 public:
  struct Merge {
    int left;
    int right;
    int output;
  };

  Vocab() {
    const auto& glyphs = internal::byte_glyphs();
    for (int b = 0; b < kByteSymbols; ++b) {
      add_token(glyphs[static_cast<std::size_t>(b)], std::string(1, static_cast<char>(b)));
    }
    add_token(std::string(kEndOfWordGlyph), " ");
  }

  std::size_t size() const noexcept { return display_.size(); }
  const std::vector<Merge>& merges() const noexcept { return merges_; }
  const SpecialIds& specials() const noexcept { return specials_; }

  const std::string& token(int id) const { return display_.at(static_cast<std::size_t>(id)); }
  // Byte content of a token; the end-of-word marker contributes a space.
  const std::string& raw(int id) const { return raw_.at(static_cast<std::size_t>(id)); }

  int id_of(std::string_view display) const {
    auto it = token_to_id_.find(std::string(display));
    return it == token_to_id_.end() ? -1 : it->second;
  }

  bool is_special(int id) const noexcept {
    return id == specials_.start || id == specials_.delim || id == specials_.clf ||
           id == specials_.pad;
  }

  // Returns the merge priority of an adjacent pair, or -1.
  int merge_rank(int left, int right) const {
    auto it = rank_.find(pair_key(left, right));
    return it == rank_.end() ? -1 : it->second;
  }

  // Records a merge and returns its output id (reusing an existing token
  // when the concatenation is already known).
  int add_merge(int left, int right) {
    if (specials_.start >= 0) throw UsageError("vocab is sealed; merges must precede specials");
    std::string disp = display_.at(static_cast<std::size_t>(left)) +
                       display_.at(static_cast<std::size_t>(right));
    int out = id_of(disp);
    if (out < 0) {
      out = add_token(std::move(disp), raw_[static_cast<std::size_t>(left)] +
                                           raw_[static_cast<std::size_t>(right)]);
    }
    rank_.emplace(pair_key(left, right), static_cast<int>(merges_.size()));
    merges_.push_back({left, right, out});
    return out;
  }

  void add_specials() {
    if (specials_.start >= 0) return;
    specials_.start = add_token(std::string(kSpecialNames[0]), std::string(kSpecialNames[0]));
    specials_.delim = add_token(std::string(kSpecialNames[1]), std::string(kSpecialNames[1]));
    specials_.clf = add_token(std::string(kSpecialNames[2]), std::string(kSpecialNames[2]));
    specials_.pad = add_token(std::string(kSpecialNames[3]), std::string(kSpecialNames[3]));
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.display_ == b.display_ && a.raw_ == b.raw_ &&
           a.merges_.size() == b.merges_.size() &&
           std::equal(a.merges_.begin(), a.merges_.end(), b.merges_.begin(),
                      [](const Merge& x, const Merge& y) {
                        return x.left == y.left && x.right == y.right &&
                               x.output == y.output;
                      });
  }

 private:
  static std::uint64_t pair_key(int left, int right) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
           static_cast<std::uint32_t>(right);
  }

  int add_token(std::string display, std::string raw) {
    const int id = static_cast<int>(display_.size());
    token_to_id_.emplace(display, id);
    display_.push_back(std::move(display));
    raw_.push_back(std::move(raw));
    return id;
  }

  std::vector<std::string> display_;
  std::vector<std::string> raw_;
  std::unordered_map<std::string, int> token_to_id_;
  std::unordered_map<std::uint64_t, int> rank_;
  std::vector<Merge> merges_;
  SpecialIds specials_;
};

// Words are the pieces between single spaces, so consecutive spaces yield
// empty words and round-trip exactly.
inline std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> words;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(' ', start);
    if (pos == std::string_view::npos) {
      words.push_back(line.substr(start));
      break;
    }
    words.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return words;
}

inline std::vector<int> base_symbols(std::string_view word) {
  std::vector<int> symbols;
  symbols.reserve(word.size() + 1);
  for (unsigned char c : word) symbols.push_back(c);
  symbols.push_back(kEndOfWord);
  return symbols;
}

namespace internal {

// Pair statistics with an ordered frontier: highest count first, then
// lexicographic on the display strings of (left, right).
class PairQueue {
 public:
  explicit PairQueue(const Vocab& vocab) : vocab_(vocab) {}

  void adjust(int left, int right, long delta) {
    if (delta == 0) return;
    const auto key = std::make_pair(left, right);
    long& count = counts_[key];
    if (count > 0) frontier_.erase(Entry{count, &vocab_, left, right});
    count += delta;
    if (count > 0) {
      frontier_.insert(Entry{count, &vocab_, left, right});
    } else {
      counts_.erase(key);
    }
  }

  bool empty() const { return frontier_.empty(); }
  std::pair<int, int> best() const {
    const Entry& e = *frontier_.begin();
    return {e.left, e.right};
  }

 private:
  struct Entry {
    long count;
    const Vocab* vocab;
    int left;
    int right;
    bool operator<(const Entry& o) const {
      if (count != o.count) return count > o.count;
      if (left != o.left) {
        const int c = vocab->token(left).compare(vocab->token(o.left));
        if (c != 0) return c < 0;
      }
      if (right != o.right) return vocab->token(right) < vocab->token(o.right);
      return false;
    }
  };

  const Vocab& vocab_;
  std::map<std::pair<int, int>, long> counts_;
  std::set<Entry> frontier_;
};

inline std::vector<int> apply_merge(const std::vector<int>& symbols, int left, int right,
                                    int output) {
  std::vector<int> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(output);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  return out;
}

}  // namespace internal

// Learns merges until the vocabulary (including the four special tokens)
// reaches target_vocab_size or no adjacent pair remains.
inline Vocab learn_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab_size) {
  if (corpus.empty()) throw ConfigError("learn_bpe: corpus is empty");
  const std::size_t minimum = kBaseSymbols + kSpecialCount;
  if (target_vocab_size < minimum) {
    throw ConfigError(detail::concat("learn_bpe: target vocab size ", target_vocab_size,
                                     " is below the ", minimum,
                                     " base symbols and special tokens"));
  }

  Vocab vocab;
  std::map<std::string, long> word_counts;
  for (const auto& line : corpus) {
    if (line.empty()) continue;
    for (auto w : split_words(line)) ++word_counts[std::string(w)];
  }

  std::vector<std::vector<int>> words;
  std::vector<long> freqs;
  for (const auto& [w, c] : word_counts) {
    words.push_back(base_symbols(w));
    freqs.push_back(c);
  }

  internal::PairQueue queue(vocab);
  std::map<std::pair<int, int>, std::set<std::size_t>> where;
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
      queue.adjust(words[w][i], words[w][i + 1], freqs[w]);
      where[{words[w][i], words[w][i + 1]}].insert(w);
    }
  }

  const std::size_t learned_target = target_vocab_size - kSpecialCount;
  while (vocab.size() < learned_target && !queue.empty()) {
    const auto [left, right] = queue.best();
    const int output = vocab.add_merge(left, right);
    const std::set<std::size_t> affected = std::move(where[{left, right}]);
    where.erase({left, right});
    for (std::size_t w : affected) {
      auto& symbols = words[w];
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
        queue.adjust(symbols[i], symbols[i + 1], -freqs[w]);
      symbols = internal::apply_merge(symbols, left, right, output);
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        queue.adjust(symbols[i], symbols[i + 1], freqs[w]);
        where[{symbols[i], symbols[i + 1]}].insert(w);
      }
    }
  }
  vocab.add_specials();
  return vocab;
}

inline void encode_word(const Vocab& vocab, std::string_view word, std::vector<int>& out) {
  std::vector<int> symbols = base_symbols(word);
  while (symbols.size() > 1) {
    int best_rank = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const int r = vocab.merge_rank(symbols[i], symbols[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) {
        best_rank = r;
        best_pos = i;
      }
    }
    if (best_rank < 0) break;
    const auto& m = vocab.merges()[static_cast<std::size_t>(best_rank)];
    symbols = internal::apply_merge(symbols, symbols[best_pos], symbols[best_pos + 1], m.output);
  }
  out.insert(out.end(), symbols.begin(), symbols.end());
}

inline std::vector<int> encode(const Vocab& vocab, std::string_view text) {
  std::vector<int> ids;
  if (text.empty()) return ids;
  for (auto w : split_words(text)) encode_word(vocab, w, ids);
  return ids;
}

inline std::string decode(const Vocab& vocab, const std::vector<int>& ids) {
  std::string out;
  bool trailing_marker = false;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw DataError(detail::concat("decode: token id ", id, " outside vocabulary of ",
                                     vocab.size()));
    }
    const std::string& piece = vocab.raw(id);
    out += piece;
    trailing_marker = !vocab.is_special(id) && !piece.empty() && piece.back() == ' ';
  }
  if (trailing_marker) out.pop_back();
  return out;
}

// Text format: a header line "distre-bpe 1 <start> <delim> <clf> <pad>"
// followed by one "left right" merge per line in priority order.
inline void save_vocab(const Vocab& vocab, std::ostream& os) {
  os << kFileMagic << ' ' << kFileVersion;
  for (auto name : kSpecialNames) os << ' ' << name;
  os << '\n';
  for (const auto& m : vocab.merges()) os << vocab.token(m.left) << ' ' << vocab.token(m.right) << '\n';
}

inline Vocab load_vocab(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw DataError("vocab file: missing header line");
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != kFileMagic || version != kFileVersion) {
    throw DataError(detail::concat("vocab file: unsupported header '", header, "'"));
  }
  for (auto expected : kSpecialNames) {
    std::string name;
    if (!(hs >> name) || name != expected) {
      throw DataError(detail::concat("vocab file: expected special token ", expected,
                                     " in header"));
    }
  }
  Vocab vocab;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
      throw DataError(detail::concat("vocab file line ", line_no, ": expected 'left right'"));
    }
    const int left = vocab.id_of(std::string_view(line).substr(0, sp));
    const int right = vocab.id_of(std::string_view(line).substr(sp + 1));
    if (left < 0 || right < 0) {
      throw DataError(detail::concat("vocab file line ", line_no, ": unknown token in '",
                                     line, "'"));
    }
    vocab.add_merge(left, right);
  }
  vocab.add_specials();
  return vocab;
}

inline void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(detail::concat("cannot write vocab file ", path));
  save_vocab(vocab, os);
  if (!os) throw DataError(detail::concat("failed writing vocab file ", path));
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(detail::concat("cannot open vocab file ", path));
  return load_vocab(is);
}

}  // namespace distre::bpe

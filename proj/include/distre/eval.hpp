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
#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "distre/data.hpp"
#include "distre/error.hpp"

namespace distre::eval {

// A scored (entity pair, relation) instance. Relation is a label name.
struct BagPrediction {
  std::string head;
  std::string tail;
  std::string relation;
  double score = 0;
  std::vector<double> alphas;  // per-sentence weights, optional
};

using Fact = std::tuple<std::string, std::string, std::string>;
using GoldFacts = std::set<Fact>;

inline const std::vector<std::size_t>& default_cutoffs() {
  static const std::vector<std::size_t> ns = {100, 200, 300, 500, 1000, 2000};
  return ns;
}

inline GoldFacts gold_facts(const std::vector<SentenceExample>& examples, const LabelTable& labels) {
  GoldFacts facts;
  for (const auto& ex : examples) {
    if (ex.relation != 0) facts.emplace(ex.head, ex.tail, labels.name(ex.relation));
  }
  return facts;
}

// Prediction files: JSON lines with head, tail, relation, score and an
// optional alphas array.
inline std::vector<BagPrediction> load_predictions(std::istream& is) {
  std::vector<BagPrediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(detail::concat("predictions line ", line_no, ": malformed JSON (", e.what(), ")"));
    }
    BagPrediction p;
    try {
      p.head = j.at("head").get<std::string>();
      p.tail = j.at("tail").get<std::string>();
      p.relation = j.at("relation").get<std::string>();
      p.score = j.at("score").get<double>();
      if (j.contains("alphas")) p.alphas = j.at("alphas").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(detail::concat("predictions line ", line_no, ": ", e.what()));
    }
    if (!std::isfinite(p.score)) {
      throw DataError(detail::concat("predictions line ", line_no, ": non-finite score"));
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<BagPrediction> load_predictions(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(detail::concat("cannot open predictions ", path));
  return load_predictions(is);
}

inline void save_predictions(const std::vector<BagPrediction>& preds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(detail::concat("cannot write predictions ", path));
  for (const auto& p : preds) {
    nlohmann::ordered_json j;
    j["head"] = p.head;
    j["tail"] = p.tail;
    j["relation"] = p.relation;
    j["score"] = p.score;
    if (!p.alphas.empty()) j["alphas"] = p.alphas;
    os << j.dump() << '\n';
  }
  if (!os) throw DataError(detail::concat("failed writing predictions ", path));
}

// Drops NA entries, rejects duplicate (pair, relation) entries, orders by
// descending score with (head, tail, relation) ascending on ties.
inline std::vector<BagPrediction> rank_predictions(std::vector<BagPrediction> preds) {
  std::erase_if(preds, [](const BagPrediction& p) { return p.relation == kNoRelation; });
  std::set<Fact> seen;
  for (const auto& p : preds) {
    if (!seen.emplace(p.head, p.tail, p.relation).second) {
      throw DataError(detail::concat("duplicate prediction for (", p.head, ", ", p.tail, ", ",
                                     p.relation, ")"));
    }
  }
  std::sort(preds.begin(), preds.end(), [](const BagPrediction& a, const BagPrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.head, a.tail, a.relation) < std::tie(b.head, b.tail, b.relation);
  });
  return preds;
}

struct PrPoint {
  std::size_t rank = 0;  // 1-based
  double precision = 0;
  double recall = 0;
  double score = 0;
  bool correct = false;
};

inline std::vector<PrPoint> pr_curve(const std::vector<BagPrediction>& ranked,
                                     const GoldFacts& gold) {
  if (gold.empty()) throw ConfigError("pr_curve: no gold facts");
  std::vector<PrPoint> points;
  points.reserve(ranked.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& p = ranked[i];
    const bool correct = gold.count({p.head, p.tail, p.relation}) > 0;
    hits += correct ? 1 : 0;
    PrPoint pt;
    pt.rank = i + 1;
    pt.precision = static_cast<double>(hits) / static_cast<double>(i + 1);
    pt.recall = static_cast<double>(hits) / static_cast<double>(gold.size());
    pt.score = p.score;
    pt.correct = correct;
    points.push_back(pt);
  }
  return points;
}

// Average-precision style area: sum of (recall gain) x (precision) at each
// rank where recall increases.
inline double auc(const std::vector<PrPoint>& points) {
  double area = 0;
  double prev_recall = 0;
  for (const auto& pt : points) {
    if (pt.recall > prev_recall) {
      area += (pt.recall - prev_recall) * pt.precision;
      prev_recall = pt.recall;
    }
  }
  return area;
}

// Trapezoidal area over (recall, precision), starting from recall 0 at the
// first point's precision.
inline double auc_trapezoid(const std::vector<PrPoint>& points) {
  if (points.empty()) return 0;
  double area = 0;
  double r0 = 0, p0 = points.front().precision;
  for (const auto& pt : points) {
    area += (pt.recall - r0) * (pt.precision + p0) / 2;
    r0 = pt.recall;
    p0 = pt.precision;
  }
  return area;
}

// Precision over the top min(N, |ranked|) predictions.
inline std::map<std::size_t, double> p_at_n(const std::vector<BagPrediction>& ranked,
                                            const GoldFacts& gold,
                                            const std::vector<std::size_t>& ns) {
  std::map<std::size_t, double> out;
  for (std::size_t n : ns) {
    if (n == 0) throw ConfigError("p_at_n: N must be at least 1");
    const std::size_t top = std::min(n, ranked.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < top; ++i) {
      hits += gold.count({ranked[i].head, ranked[i].tail, ranked[i].relation}) ? 1 : 0;
    }
    out[n] = top == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(top);
  }
  return out;
}

struct EvalReport {
  std::vector<PrPoint> pr_points;
  double auc = 0;
  double auc_trapezoid = 0;
  std::map<std::size_t, double> p_at;
  std::size_t total_facts = 0;
};

inline EvalReport evaluate(const std::vector<BagPrediction>& predictions, const GoldFacts& gold,
                           const std::vector<std::size_t>& ns = default_cutoffs()) {
  const auto ranked = rank_predictions(predictions);
  EvalReport r;
  r.pr_points = pr_curve(ranked, gold);
  r.auc = auc(r.pr_points);
  r.auc_trapezoid = auc_trapezoid(r.pr_points);
  r.p_at = p_at_n(ranked, gold, ns);
  r.total_facts = gold.size();
  return r;
}

namespace internal {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string number(double v) {
  std::ostringstream oss;
  oss.precision(12);
  oss << v;
  return oss.str();
}

}  // namespace internal

// Writes pr_curve.csv and summary.json into dir. With trapezoid set, the
// summary's "auc" is the trapezoidal area.
inline void write_report(const EvalReport& report, const std::filesystem::path& dir,
                         bool trapezoid = false) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "pr_curve.csv", std::ios::binary);
  if (!csv) throw DataError(detail::concat("cannot write ", (dir / "pr_curve.csv").string()));
  csv << "rank,precision,recall,score,correct\n";
  for (const auto& p : report.pr_points) {
    csv << p.rank << ',' << internal::number(p.precision) << ',' << internal::number(p.recall)
        << ',' << internal::number(p.score) << ',' << (p.correct ? 1 : 0) << '\n';
  }
  nlohmann::ordered_json j;
  j["auc"] = trapezoid ? report.auc_trapezoid : report.auc;
  j["auc_rule"] = trapezoid ? "trapezoid" : "average_precision";
  nlohmann::ordered_json pat = nlohmann::ordered_json::object();
  for (const auto& [n, p] : report.p_at) pat[std::to_string(n)] = p;
  j["p_at"] = pat;
  j["total_facts"] = report.total_facts;
  j["predictions"] = report.pr_points.size();
  std::ofstream summary(dir / "summary.json", std::ios::binary);
  if (!summary) throw DataError(detail::concat("cannot write ", (dir / "summary.json").string()));
  summary << j.dump(2) << '\n';
}

inline std::filesystem::path distribution_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  return p.replace_extension(".distribution.csv");
}

// Top-N predictions for manual rating: one "prediction" row per instance
// followed by one "sentence" row per supporting sentence with its weight.
// Also writes the relation distribution over the top N next to `path`.
inline void export_topn(const std::vector<BagPrediction>& ranked, const std::vector<Bag>& test_bags,
                        std::size_t n, const std::filesystem::path& path) {
  if (n == 0) throw ConfigError("export_topn: N must be at least 1");
  std::map<std::pair<std::string, std::string>, const Bag*> by_pair;
  for (const auto& b : test_bags) by_pair.emplace(std::make_pair(b.head, b.tail), &b);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(detail::concat("cannot write ", path.string(), ": ", std::strerror(errno)));
  os << "kind,rank,head,tail,relation,score,sentence,alpha,text\n";
  std::map<std::string, std::size_t> distribution;
  const std::size_t top = std::min(n, ranked.size());
  for (std::size_t i = 0; i < top; ++i) {
    const auto& p = ranked[i];
    ++distribution[p.relation];
    const std::string common = std::to_string(i + 1) + ',' + internal::csv_field(p.head) + ',' +
                               internal::csv_field(p.tail) + ',' + internal::csv_field(p.relation);
    os << "prediction," << common << ',' << internal::number(p.score) << ",,,\n";
    auto it = by_pair.find({p.head, p.tail});
    if (it == by_pair.end()) continue;
    const auto& sentences = it->second->sentences;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      os << "sentence," << common << ",," << s << ','
         << (s < p.alphas.size() ? internal::number(p.alphas[s]) : std::string()) << ','
         << internal::csv_field(sentences[s].text) << '\n';
    }
  }
  if (!os) throw DataError(detail::concat("failed writing ", path.string()));

  std::vector<std::pair<std::string, std::size_t>> rows(distribution.begin(), distribution.end());
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto dist_path = distribution_path(path);
  std::ofstream ds(dist_path, std::ios::binary);
  if (!ds) throw DataError(detail::concat("cannot write ", dist_path.string(), ": ", std::strerror(errno)));
  ds << "relation,count\n";
  for (const auto& [rel, count] : rows) ds << internal::csv_field(rel) << ',' << count << '\n';
}

}  // namespace distre::eval

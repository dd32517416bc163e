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

#include <optional>
#include <span>
#include <vector>

#include "distre/autodiff.hpp"
#include "distre/data.hpp"
#include "distre/error.hpp"
#include "distre/model.hpp"

namespace distre::mil {

// Final-layer state at the trailing classification token, plus the trace it
// came from (reused for the auxiliary LM term).
struct EncodedSentence {
  ForwardTrace trace;
  Var repr;  // 1 x d
};

template <std::floating_point Real>
EncodedSentence encode_sentence(Graph<Real>& g, const BoundParams& p, const ModelConfig& config,
                                std::span<const int> formatted_ids, int clf_id, Mode mode,
                                Rng* rng) {
  if (formatted_ids.empty() || formatted_ids.back() != clf_id) {
    throw InputError("sentence_repr: formatted input must end with the classification token");
  }
  EncodedSentence out;
  out.trace = forward(g, p, config, formatted_ids, mode, rng);
  out.repr = g.slice_rows(out.trace.final_state(), formatted_ids.size() - 1, 1);
  return out;
}

template <std::floating_point Real>
Var sentence_repr(Graph<Real>& g, const BoundParams& p, const ModelConfig& config,
                  std::span<const int> formatted_ids, int clf_id, Mode mode, Rng* rng) {
  return encode_sentence(g, p, config, formatted_ids, clf_id, mode, rng).repr;
}

struct Aggregate {
  Var alphas;  // 1 x n
  Var bag;     // 1 x d
};

// alpha_i = softmax_i(s_i . query); bag = sum_i alpha_i s_i.
template <std::floating_point Real>
Aggregate selective_attention(Graph<Real>& g, const std::vector<Var>& reprs, Var query) {
  if (reprs.empty()) throw InputError("selective_attention: empty bag");
  const Var stacked = reprs.size() == 1 ? reprs[0] : g.concat_rows(reprs);
  const Var alphas = g.softmax(g.matmul_nt(query, stacked));
  return {alphas, g.matmul(alphas, stacked)};
}

// Uniform weights, evaluated through the same weighted sum as
// selective_attention.
template <std::floating_point Real>
Aggregate average_aggregation(Graph<Real>& g, const std::vector<Var>& reprs) {
  if (reprs.empty()) throw InputError("average_aggregation: empty bag");
  const Var stacked = reprs.size() == 1 ? reprs[0] : g.concat_rows(reprs);
  const Real w = Real(1) / static_cast<Real>(reprs.size());
  const Var alphas = g.constant(Tensor<Real>({1, reprs.size()}, w));
  return {alphas, g.matmul(alphas, stacked)};
}

template <std::floating_point Real>
Var relation_query(Graph<Real>& g, const BoundParams& p, int relation) {
  return g.slice_rows(p.relation_matrix, static_cast<std::size_t>(relation), 1);
}

// W_r s + b, with classifier dropout on s in train mode. 1 x R.
template <std::floating_point Real>
Var classifier_logits(Graph<Real>& g, const BoundParams& p, const ModelConfig& config, Var bag,
                      Mode mode, Rng* rng) {
  Rng unused;
  const Var dropped = g.dropout(bag, static_cast<Real>(config.dropout_classifier),
                                mode == Mode::kTrain, rng ? *rng : unused);
  return g.add_row(g.matmul_nt(dropped, p.relation_matrix), p.relation_bias);
}

template <std::floating_point Real>
Var classify_bag(Graph<Real>& g, const BoundParams& p, const ModelConfig& config, Var bag,
                 Mode mode, Rng* rng) {
  return g.softmax(classifier_logits(g, p, config, bag, mode, rng));
}

// Loss terms of one bag; `lm` is the mean LM loss over its sequences and is
// only built when requested.
struct BagLosses {
  Var bag_loss;
  std::optional<Var> lm;
  Aggregate aggregate;
  Var logits;
};

template <std::floating_point Real>
BagLosses bag_losses(Graph<Real>& g, const BoundParams& p, const ModelConfig& config,
                     const EncodedBag& bag, int clf_id, bool with_lm, Mode mode, Rng* rng) {
  if (bag.sequences.empty()) throw InputError("bag_loss: empty bag");
  if (bag.label < 0 || static_cast<std::size_t>(bag.label) >= config.relations) {
    throw DataError(detail::concat("bag_loss: label ", bag.label, " outside ",
                                   config.relations, " relations"));
  }
  std::vector<Var> reprs;
  std::vector<Var> lm_terms;
  for (const auto& seq : bag.sequences) {
    EncodedSentence enc = encode_sentence(g, p, config, seq, clf_id, mode, rng);
    reprs.push_back(enc.repr);
    if (with_lm && seq.size() >= 2) {
      const LossMask mask(seq.size(), 1);
      lm_terms.push_back(lm_loss_from_trace(g, p, enc.trace, seq, mask));
    }
  }
  BagLosses out;
  out.aggregate = selective_attention(g, reprs, relation_query(g, p, bag.label));
  out.logits = classifier_logits(g, p, config, out.aggregate.bag, mode, rng);
  const int target[] = {bag.label};
  const std::uint8_t counted[] = {1};
  out.bag_loss = g.cross_entropy(out.logits, target, counted);
  if (with_lm && !lm_terms.empty()) {
    Var total = lm_terms.size() == 1 ? lm_terms[0] : g.sum(g.concat_cols(lm_terms));
    out.lm = g.scale(total, Real(1) / static_cast<Real>(lm_terms.size()));
  }
  return out;
}

// -log P(label | bag) with the gold relation's row of W_r as attention query.
template <std::floating_point Real>
Var bag_loss(Graph<Real>& g, const BoundParams& p, const ModelConfig& config,
             const EncodedBag& bag, int clf_id, Mode mode, Rng* rng) {
  return bag_losses(g, p, config, bag, clf_id, false, mode, rng).bag_loss;
}

// lambda * L1 + L2; with lambda == 0 the LM term is not built at all.
template <std::floating_point Real>
Var combined_loss(Graph<Real>& g, const BoundParams& p, const ModelConfig& config,
                  const EncodedBag& bag, int clf_id, double lambda, Mode mode, Rng* rng) {
  if (lambda < 0) throw ConfigError(detail::concat("combined_loss: lambda ", lambda, " < 0"));
  BagLosses losses = bag_losses(g, p, config, bag, clf_id, lambda > 0, mode, rng);
  if (!losses.lm) return losses.bag_loss;
  return g.add(g.scale(*losses.lm, static_cast<Real>(lambda)), losses.bag_loss);
}

struct RelationScore {
  int relation = 0;
  double score = 0;
  std::vector<double> alphas;
};

// Eval-mode sentence representations of a bag, one d-wide row each.
template <std::floating_point Real>
std::vector<Tensor<Real>> bag_representations(const Parameters<Real>& params,
                                              const ModelConfig& config, const EncodedBag& bag,
                                              int clf_id) {
  std::vector<Tensor<Real>> out;
  for (const auto& seq : bag.sequences) {
    Graph<Real> g;
    const BoundParams p = bind(g, params, static_cast<Parameters<Real>*>(nullptr));
    out.push_back(g.value(sentence_repr(g, p, config, seq, clf_id, Mode::kEval, nullptr)));
  }
  return out;
}

// Per-relation querying: for every non-NA relation l, aggregate with row l of
// W_r and report P(l) under that aggregate.
template <std::floating_point Real>
std::vector<RelationScore> score_relations(const Parameters<Real>& params,
                                           const ModelConfig& config,
                                           const std::vector<Tensor<Real>>& reprs) {
  if (reprs.empty()) throw InputError("predict_bag: empty bag");
  Graph<Real> g;
  const BoundParams p = bind(g, params, static_cast<Parameters<Real>*>(nullptr));
  std::vector<Var> rows;
  for (const auto& r : reprs) rows.push_back(g.constant(r));
  std::vector<RelationScore> out;
  for (std::size_t l = 1; l < config.relations; ++l) {
    const Aggregate agg = selective_attention(g, rows, relation_query(g, p, static_cast<int>(l)));
    const Var probs = classify_bag(g, p, config, agg.bag, Mode::kEval, nullptr);
    RelationScore rs;
    rs.relation = static_cast<int>(l);
    rs.score = static_cast<double>(g.value(probs)[l]);
    for (Real a : g.value(agg.alphas).values()) rs.alphas.push_back(static_cast<double>(a));
    out.push_back(std::move(rs));
  }
  return out;
}

template <std::floating_point Real>
std::vector<RelationScore> predict_bag(const Parameters<Real>& params, const ModelConfig& config,
                                       const EncodedBag& bag, int clf_id) {
  if (bag.sequences.empty()) throw InputError("predict_bag: empty bag");
  return score_relations(params, config, bag_representations(params, config, bag, clf_id));
}

// Attention weights of a bag under one relation's query (eval mode).
template <std::floating_point Real>
std::vector<double> attention_for(const Parameters<Real>& params, const ModelConfig& /*config*/,
                                  const std::vector<Tensor<Real>>& reprs, int relation) {
  Graph<Real> g;
  const BoundParams p = bind(g, params, static_cast<Parameters<Real>*>(nullptr));
  std::vector<Var> rows;
  for (const auto& r : reprs) rows.push_back(g.constant(r));
  const Aggregate agg = selective_attention(g, rows, relation_query(g, p, relation));
  std::vector<double> out;
  for (Real a : g.value(agg.alphas).values()) out.push_back(static_cast<double>(a));
  return out;
}

}  // namespace distre::mil

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

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "distre/autodiff.hpp"
#include "distre/bpe.hpp"
#include "distre/data.hpp"
#include "distre/error.hpp"
#include "distre/mil.hpp"
#include "distre/model.hpp"
#include "distre/random.hpp"

namespace distre {

// Optimization settings. Defaults are the fine-tuning hyperparameters:
// Adam(0.9, 0.999), batch 8, lr 6.25e-5 with linear warmup over 0.2% of
// updates then linear decay, 3 epochs, dropout 0.1/0.1/0.2.
struct TrainConfig {
  double lr_peak = 6.25e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  double warmup_fraction = 0.002;
  double lambda = 0.5;
  std::uint64_t seed = 42;
  double clip_norm = 0.0;  // 0 disables gradient clipping
  double dropout_residual = 0.1;
  double dropout_attention = 0.1;
  double dropout_classifier = 0.2;

  void validate() const {
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) {
      throw ConfigError(detail::concat("warmup fraction ", warmup_fraction, " outside [0, 1)"));
    }
    if (!(lr_peak >= 0)) throw ConfigError(detail::concat("learning rate ", lr_peak, " is negative"));
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    if (lambda < 0) throw ConfigError(detail::concat("lambda ", lambda, " is negative"));
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
  }

  ModelConfig apply_dropout(ModelConfig c) const {
    c.dropout_residual = dropout_residual;
    c.dropout_attention = dropout_attention;
    c.dropout_classifier = dropout_classifier;
    return c;
  }
};

// Updates spent warming up; rounded up so the peak is hit on an integer step.
inline std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& config) {
  return static_cast<std::size_t>(
      std::ceil(config.warmup_fraction * static_cast<double>(total_steps)));
}

// Linear rise 0 -> lr_peak over the warmup, then linear decay to 0 at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
  if (total_steps == 0) throw UsageError("lr_at: total_steps must be positive");
  if (step > total_steps) {
    throw UsageError(detail::concat("lr_at: step ", step, " beyond ", total_steps));
  }
  const std::size_t warm = warmup_steps(total_steps, config);
  if (step < warm) {
    return config.lr_peak * static_cast<double>(step) / static_cast<double>(warm);
  }
  if (warm == total_steps) return config.lr_peak;
  return config.lr_peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warm);
}

template <std::floating_point Real>
struct OptimizerState {
  Parameters<Real> first_moment;
  Parameters<Real> second_moment;
  std::size_t step = 0;

  static OptimizerState for_config(const ModelConfig& c) {
    return {Parameters<Real>::zeros(c), Parameters<Real>::zeros(c), 0};
  }
};

// One bias-corrected Adam update. Consumes (zeroes) grads.
template <std::floating_point Real>
void adam_step(Parameters<Real>& params, Parameters<Real>& grads, OptimizerState<Real>& state,
               double lr, const TrainConfig& config) {
  std::vector<Tensor<Real>*> g, m, v;
  grads.for_each([&](const std::string&, Tensor<Real>& t) { g.push_back(&t); });
  state.first_moment.for_each([&](const std::string&, Tensor<Real>& t) { m.push_back(&t); });
  state.second_moment.for_each([&](const std::string&, Tensor<Real>& t) { v.push_back(&t); });
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Tensor<Real>& p) {
    if (i >= g.size() || g[i]->shape() != p.shape()) {
      throw UsageError(detail::concat("adam_step: missing gradient for ", name));
    }
    if (m[i]->shape() != p.shape() || v[i]->shape() != p.shape()) {
      throw UsageError(detail::concat("adam_step: optimizer state does not match ", name));
    }
    ++i;
  });

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const Real b1 = static_cast<Real>(config.beta1), b2 = static_cast<Real>(config.beta2);
  i = 0;
  params.for_each([&](const std::string&, Tensor<Real>& p) {
    Tensor<Real>& gt = *g[i];
    Tensor<Real>& mt = *m[i];
    Tensor<Real>& vt = *v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const Real gk = gt[k];
      mt[k] = b1 * mt[k] + (Real(1) - b1) * gk;
      vt[k] = b2 * vt[k] + (Real(1) - b2) * gk * gk;
      const double m_hat = static_cast<double>(mt[k]) / c1;
      const double v_hat = static_cast<double>(vt[k]) / c2;
      p[k] -= static_cast<Real>(lr * m_hat / (std::sqrt(v_hat) + config.adam_eps));
    }
    gt.zero();
    ++i;
  });
}

template <std::floating_point Real>
void clip_gradients(Parameters<Real>& grads, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  grads.for_each([&](const std::string&, const Tensor<Real>& t) {
    for (Real v : t.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const Real s = static_cast<Real>(max_norm / norm);
  grads.for_each([&](const std::string&, Tensor<Real>& t) {
    for (auto& v : t.values()) v *= s;
  });
}

// LM training windows: START + BPE(line), cut into context-length pieces;
// pieces never span two lines.
inline std::vector<std::vector<int>> lm_windows(const bpe::Vocab& vocab,
                                                const std::vector<std::string>& lines,
                                                std::size_t context) {
  std::vector<std::vector<int>> windows;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    std::vector<int> ids{vocab.specials().start};
    const auto enc = bpe::encode(vocab, line);
    ids.insert(ids.end(), enc.begin(), enc.end());
    for (std::size_t start = 0; start < ids.size(); start += context) {
      const std::size_t end = std::min(ids.size(), start + context);
      if (end - start >= 2) windows.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                                 ids.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return windows;
}

// Mean per-window LM loss in eval mode.
template <std::floating_point Real>
double mean_lm_loss(const Parameters<Real>& params, const ModelConfig& config,
                    const std::vector<std::vector<int>>& windows) {
  if (windows.empty()) return 0.0;
  double total = 0;
  for (const auto& w : windows) {
    Graph<Real> g;
    const BoundParams p = bind(g, params, static_cast<Parameters<Real>*>(nullptr));
    const LossMask mask(w.size(), 1);
    total += static_cast<double>(g.value(lm_loss(g, p, config, w, mask, Mode::kEval, nullptr))[0]);
  }
  return total / static_cast<double>(windows.size());
}

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0;
  double metric = 0;  // perplexity (LM) or bag accuracy (fine-tuning)
};

template <std::floating_point Real>
using EpochCallback = std::function<void(std::size_t epoch, const Parameters<Real>&)>;

// Minimizes the LM loss over the windows. Writes "step,lr,loss,perplexity"
// rows to metrics when given.
template <std::floating_point Real>
std::vector<EpochStats> pretrain_lm(const std::vector<std::vector<int>>& windows,
                                    Parameters<Real>& params, const ModelConfig& model_config,
                                    const TrainConfig& config, Rng& rng,
                                    std::ostream* metrics = nullptr,
                                    const EpochCallback<Real>& on_epoch = {}) {
  config.validate();
  if (windows.empty()) throw DataError("pretrain_lm: corpus yields no training windows");
  const ModelConfig mc = config.apply_dropout(model_config);
  mc.validate();
  const std::size_t per_epoch = (windows.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  OptimizerState<Real> opt = OptimizerState<Real>::for_config(mc);
  Parameters<Real> grads = Parameters<Real>::zeros(mc);
  if (metrics) *metrics << "step,lr,loss,perplexity\n";

  std::vector<std::size_t> order(windows.size());
  std::vector<EpochStats> stats;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, rng);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const Real inv = Real(1) / static_cast<Real>(end - begin);
      double batch_loss = 0;
      for (std::size_t j = begin; j < end; ++j) {
        const auto& w = windows[order[j]];
        Graph<Real> g;
        const BoundParams p = bind(g, params, &grads);
        const LossMask mask(w.size(), 1);
        const Var loss = lm_loss(g, p, mc, w, mask, Mode::kTrain, &rng);
        batch_loss += static_cast<double>(g.value(loss)[0]);
        g.backward(g.scale(loss, inv));
      }
      batch_loss /= static_cast<double>(end - begin);
      clip_gradients(grads, config.clip_norm);
      const double lr = lr_at(step, total, config);
      adam_step(params, grads, opt, lr, config);
      if (metrics) *metrics << step << ',' << lr << ',' << batch_loss << ',' << std::exp(batch_loss) << '\n';
      epoch_loss += batch_loss * static_cast<double>(end - begin);
      ++step;
    }
    EpochStats s;
    s.epoch = epoch;
    s.mean_loss = epoch_loss / static_cast<double>(windows.size());
    s.metric = std::exp(s.mean_loss);
    stats.push_back(s);
    if (on_epoch) on_epoch(epoch, params);
  }
  return stats;
}

// Minimizes lambda * L1 + L2 over bag batches. Writes
// "step,lr,loss,bag_accuracy" rows to metrics when given; accuracy is the
// argmax of the training-mode classifier under the gold query.
template <std::floating_point Real>
std::vector<EpochStats> finetune(const std::vector<EncodedBag>& bags, Parameters<Real>& params,
                                 const ModelConfig& model_config, const TrainConfig& config,
                                 int clf_id, Rng& rng, std::ostream* metrics = nullptr,
                                 const EpochCallback<Real>& on_epoch = {}) {
  config.validate();
  if (bags.empty()) throw DataError("finetune: no training bags");
  const ModelConfig mc = config.apply_dropout(model_config);
  mc.validate();
  if (params.relation_matrix.rows() != mc.relations) {
    throw ConfigError(detail::concat("finetune: model has ", params.relation_matrix.rows(),
                                     " relations, data has ", mc.relations));
  }
  for (const auto& b : bags) {
    if (b.label < 0 || static_cast<std::size_t>(b.label) >= mc.relations) {
      throw ConfigError(detail::concat("finetune: label ", b.label, " outside ", mc.relations,
                                       " relations"));
    }
  }
  const BagBatcher batcher(bags, config.batch_size, -1, rng());
  const std::size_t per_epoch = batcher.batches_per_epoch();
  const std::size_t total = per_epoch * config.epochs;
  OptimizerState<Real> opt = OptimizerState<Real>::for_config(mc);
  Parameters<Real> grads = Parameters<Real>::zeros(mc);
  if (metrics) *metrics << "step,lr,loss,bag_accuracy\n";

  std::vector<EpochStats> stats;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = batcher.order(epoch);
    double epoch_loss = 0;
    std::size_t epoch_correct = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const Real inv = Real(1) / static_cast<Real>(end - begin);
      double batch_loss = 0;
      std::size_t correct = 0;
      for (std::size_t j = begin; j < end; ++j) {
        const EncodedBag& bag = bags[order[j]];
        Graph<Real> g;
        const BoundParams p = bind(g, params, &grads);
        mil::BagLosses losses =
            mil::bag_losses(g, p, mc, bag, clf_id, config.lambda > 0, Mode::kTrain, &rng);
        Var loss = losses.bag_loss;
        if (losses.lm) loss = g.add(g.scale(*losses.lm, static_cast<Real>(config.lambda)), loss);
        batch_loss += static_cast<double>(g.value(loss)[0]);
        const auto logits = g.value(losses.logits).values();
        const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
        correct += best == bag.label ? 1 : 0;
        g.backward(g.scale(loss, inv));
      }
      batch_loss /= static_cast<double>(end - begin);
      clip_gradients(grads, config.clip_norm);
      const double lr = lr_at(step, total, config);
      adam_step(params, grads, opt, lr, config);
      if (metrics) {
        *metrics << step << ',' << lr << ',' << batch_loss << ','
                 << static_cast<double>(correct) / static_cast<double>(end - begin) << '\n';
      }
      epoch_loss += batch_loss * static_cast<double>(end - begin);
      epoch_correct += correct;
      ++step;
    }
    EpochStats s;
    s.epoch = epoch;
    s.mean_loss = epoch_loss / static_cast<double>(bags.size());
    s.metric = static_cast<double>(epoch_correct) / static_cast<double>(bags.size());
    stats.push_back(s);
    if (on_epoch) on_epoch(epoch, params);
  }
  return stats;
}

// Eval-mode bag accuracy: the predicted label is the relation (NA included)
// with the highest probability under its own attention query.
template <std::floating_point Real>
double bag_accuracy(const Parameters<Real>& params, const ModelConfig& config,
                    const std::vector<EncodedBag>& bags, int clf_id) {
  if (bags.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& bag : bags) {
    const auto reprs = mil::bag_representations(params, config, bag, clf_id);
    Graph<Real> g;
    const BoundParams p = bind(g, params, static_cast<Parameters<Real>*>(nullptr));
    std::vector<Var> rows;
    for (const auto& r : reprs) rows.push_back(g.constant(r));
    int best = 0;
    double best_score = -1;
    for (std::size_t l = 0; l < config.relations; ++l) {
      const auto agg = mil::selective_attention(g, rows, mil::relation_query(g, p, static_cast<int>(l)));
      const double score = static_cast<double>(
          g.value(mil::classify_bag(g, p, config, agg.bag, Mode::kEval, nullptr))[l]);
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(l);
      }
    }
    correct += best == bag.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(bags.size());
}

// Resizes the relation head when starting from an LM-only model; any other
// mismatch between model and label table is a configuration error.
template <std::floating_point Real>
void prepare_relation_head(Parameters<Real>& params, ModelConfig& config,
                           std::size_t relations, bool lm_only, Rng& rng) {
  if (config.relations == relations) {
    if (lm_only) params.reset_relation_head(rng);
    return;
  }
  if (!lm_only) {
    throw ConfigError(detail::concat("checkpoint has ", config.relations,
                                     " relations but the label table has ", relations));
  }
  config.relations = relations;
  params.relation_matrix = Tensor<Real>::matrix(relations, config.width);
  params.relation_bias = Tensor<Real>::matrix(1, relations);
  params.reset_relation_head(rng);
}

}  // namespace distre

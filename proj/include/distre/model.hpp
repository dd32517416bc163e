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
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "distre/autodiff.hpp"
#include "distre/error.hpp"
#include "distre/tensor.hpp"

namespace distre {

enum class Mode { kTrain, kEval };

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t width = 128;
  std::size_t ff_width = 512;
  std::size_t context = 128;
  std::size_t vocab_size = 8192;
  std::size_t relations = 2;
  double dropout_residual = 0.1;
  double dropout_attention = 0.1;
  double dropout_classifier = 0.2;

  // 12 blocks, 12 heads, 768-wide states, 3072-wide feedforward.
  static ModelConfig full_scale(std::size_t vocab, std::size_t relations) {
    ModelConfig c;
    c.layers = 12;
    c.heads = 12;
    c.width = 768;
    c.ff_width = 3072;
    c.context = 512;
    c.vocab_size = vocab;
    c.relations = relations;
    return c;
  }

  std::size_t head_width() const { return width / heads; }

  void validate() const {
    if (layers == 0 || heads == 0 || width == 0 || ff_width == 0 || context == 0 ||
        vocab_size == 0 || relations == 0) {
      throw ConfigError("model config: all dimensions must be positive");
    }
    if (width % heads != 0) {
      throw ConfigError(detail::concat("model config: width ", width,
                                       " is not divisible by ", heads, " heads"));
    }
    for (double p : {dropout_residual, dropout_attention, dropout_classifier}) {
      if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError(detail::concat("model config: dropout rate ", p,
                                         " outside [0, 1)"));
      }
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Closed-form number of learned scalars.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.width, f = c.ff_width;
  const std::size_t per_block = 4 * d * d + d * f + f + f * d + d + 4 * d;
  return c.vocab_size * d + c.context * d + c.layers * per_block + c.relations * d +
         c.relations;
}

template <std::floating_point Real>
struct BlockParams {
  Tensor<Real> query, key, value, output;   // d x d
  Tensor<Real> ff_in, ff_in_bias;           // d x ff, 1 x ff
  Tensor<Real> ff_out, ff_out_bias;         // ff x d, 1 x d
  Tensor<Real> ln1_gain, ln1_bias;          // 1 x d
  Tensor<Real> ln2_gain, ln2_bias;          // 1 x d
};

// All learned tensors. The same structure doubles as a gradient accumulator.
template <std::floating_point Real>
struct Parameters {
  Tensor<Real> token_embedding;      // V x d, also the LM output projection
  Tensor<Real> position_embedding;   // k x d
  std::vector<BlockParams<Real>> blocks;
  Tensor<Real> relation_matrix;      // R x d, rows double as attention queries
  Tensor<Real> relation_bias;        // 1 x R

  static Parameters zeros(const ModelConfig& c) {
    using T = Tensor<Real>;
    const std::size_t d = c.width, f = c.ff_width;
    Parameters p;
    p.token_embedding = T::matrix(c.vocab_size, d);
    p.position_embedding = T::matrix(c.context, d);
    p.blocks.resize(c.layers);
    for (auto& b : p.blocks) {
      b.query = b.key = b.value = b.output = T::matrix(d, d);
      b.ff_in = T::matrix(d, f);
      b.ff_in_bias = T::matrix(1, f);
      b.ff_out = T::matrix(f, d);
      b.ff_out_bias = T::matrix(1, d);
      b.ln1_gain = b.ln1_bias = b.ln2_gain = b.ln2_bias = T::matrix(1, d);
    }
    p.relation_matrix = T::matrix(c.relations, d);
    p.relation_bias = T::matrix(1, c.relations);
    return p;
  }

  // Weight matrices ~ N(0, 0.02), biases 0, layernorm gains 1.
  static Parameters initialized(const ModelConfig& c, Rng& rng) {
    c.validate();
    Parameters p = zeros(c);
    const Real stddev = static_cast<Real>(0.02);
    fill_normal(p.token_embedding, stddev, rng);
    fill_normal(p.position_embedding, stddev, rng);
    for (auto& b : p.blocks) {
      for (auto* w : {&b.query, &b.key, &b.value, &b.output, &b.ff_in, &b.ff_out})
        fill_normal(*w, stddev, rng);
      b.ln1_gain.fill(Real(1));
      b.ln2_gain.fill(Real(1));
    }
    p.reset_relation_head(rng);
    return p;
  }

  void reset_relation_head(Rng& rng) {
    fill_normal(relation_matrix, static_cast<Real>(0.02), rng);
    relation_bias.zero();
  }

  // Visits every tensor in canonical (checkpoint) order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<Real>& t) { n += t.size(); });
    return n;
  }

  void zero() {
    for_each([](const std::string&, Tensor<Real>& t) { t.zero(); });
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Tensor<Real>& t) { ok = ok && t.all_finite(); });
    return ok;
  }

  Parameters& operator+=(const Parameters& other) {
    std::vector<const Tensor<Real>*> rhs;
    other.for_each([&](const std::string&, const Tensor<Real>& t) { rhs.push_back(&t); });
    std::size_t i = 0;
    for_each([&](const std::string&, Tensor<Real>& t) { t += *rhs[i++]; });
    return *this;
  }

  template <std::floating_point Other>
  Parameters<Other> cast() const {
    Parameters<Other> out;
    out.token_embedding = token_embedding.template cast<Other>();
    out.position_embedding = position_embedding.template cast<Other>();
    for (const auto& b : blocks) {
      BlockParams<Other> o;
      o.query = b.query.template cast<Other>();
      o.key = b.key.template cast<Other>();
      o.value = b.value.template cast<Other>();
      o.output = b.output.template cast<Other>();
      o.ff_in = b.ff_in.template cast<Other>();
      o.ff_in_bias = b.ff_in_bias.template cast<Other>();
      o.ff_out = b.ff_out.template cast<Other>();
      o.ff_out_bias = b.ff_out_bias.template cast<Other>();
      o.ln1_gain = b.ln1_gain.template cast<Other>();
      o.ln1_bias = b.ln1_bias.template cast<Other>();
      o.ln2_gain = b.ln2_gain.template cast<Other>();
      o.ln2_bias = b.ln2_bias.template cast<Other>();
      out.blocks.push_back(std::move(o));
    }
    out.relation_matrix = relation_matrix.template cast<Other>();
    out.relation_bias = relation_bias.template cast<Other>();
    return out;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    std::vector<const Tensor<Real>*> rhs;
    b.for_each([&](const std::string&, const Tensor<Real>& t) { rhs.push_back(&t); });
    std::size_t i = 0;
    bool same = true;
    a.for_each([&](const std::string&, const Tensor<Real>& t) {
      same = same && i < rhs.size() && t == *rhs[i];
      ++i;
    });
    return same && i == rhs.size();
  }

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    fn(std::string("token_embedding"), self.token_embedding);
    fn(std::string("position_embedding"), self.position_embedding);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      auto& b = self.blocks[l];
      const std::string prefix = "block" + std::to_string(l) + ".";
      fn(prefix + "query", b.query);
      fn(prefix + "key", b.key);
      fn(prefix + "value", b.value);
      fn(prefix + "output", b.output);
      fn(prefix + "ff_in", b.ff_in);
      fn(prefix + "ff_in_bias", b.ff_in_bias);
      fn(prefix + "ff_out", b.ff_out);
      fn(prefix + "ff_out_bias", b.ff_out_bias);
      fn(prefix + "ln1_gain", b.ln1_gain);
      fn(prefix + "ln1_bias", b.ln1_bias);
      fn(prefix + "ln2_gain", b.ln2_gain);
      fn(prefix + "ln2_bias", b.ln2_bias);
    }
    fn(std::string("relation_matrix"), self.relation_matrix);
    fn(std::string("relation_bias"), self.relation_bias);
  }
};

// Graph leaves for one Parameters instance.
struct BoundBlock {
  Var query, key, value, output, ff_in, ff_in_bias, ff_out, ff_out_bias;
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct BoundParams {
  Var token_embedding, position_embedding;
  std::vector<BoundBlock> blocks;
  Var relation_matrix, relation_bias;
};

// Binds parameters into a graph. With grads == nullptr nothing is
// differentiated; otherwise every tensor's gradient accumulates into the
// matching tensor of *grads.
template <std::floating_point Real>
BoundParams bind(Graph<Real>& g, const Parameters<Real>& p, Parameters<Real>* grads) {
  auto leaf = [&](const Tensor<Real>& value, Tensor<Real>* sink) { return g.leaf(value, sink); };
  auto sink = [&](auto member) -> Tensor<Real>* {
    return grads ? &(grads->*member) : nullptr;
  };
  BoundParams b;
  b.token_embedding = leaf(p.token_embedding, sink(&Parameters<Real>::token_embedding));
  b.position_embedding =
      leaf(p.position_embedding, sink(&Parameters<Real>::position_embedding));
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& pb = p.blocks[l];
    BlockParams<Real>* gb = grads ? &grads->blocks[l] : nullptr;
    auto bs = [&](Tensor<Real> BlockParams<Real>::*m) -> Tensor<Real>* {
      return gb ? &(gb->*m) : nullptr;
    };
    using BP = BlockParams<Real>;
    BoundBlock bb;
    bb.query = leaf(pb.query, bs(&BP::query));
    bb.key = leaf(pb.key, bs(&BP::key));
    bb.value = leaf(pb.value, bs(&BP::value));
    bb.output = leaf(pb.output, bs(&BP::output));
    bb.ff_in = leaf(pb.ff_in, bs(&BP::ff_in));
    bb.ff_in_bias = leaf(pb.ff_in_bias, bs(&BP::ff_in_bias));
    bb.ff_out = leaf(pb.ff_out, bs(&BP::ff_out));
    bb.ff_out_bias = leaf(pb.ff_out_bias, bs(&BP::ff_out_bias));
    bb.ln1_gain = leaf(pb.ln1_gain, bs(&BP::ln1_gain));
    bb.ln1_bias = leaf(pb.ln1_bias, bs(&BP::ln1_bias));
    bb.ln2_gain = leaf(pb.ln2_gain, bs(&BP::ln2_gain));
    bb.ln2_bias = leaf(pb.ln2_bias, bs(&BP::ln2_bias));
    b.blocks.push_back(bb);
  }
  b.relation_matrix = leaf(p.relation_matrix, sink(&Parameters<Real>::relation_matrix));
  b.relation_bias = leaf(p.relation_bias, sink(&Parameters<Real>::relation_bias));
  return b;
}

// h_0..h_L plus per-block, per-head attention weights (each T x T).
struct ForwardTrace {
  std::vector<Var> states;
  std::vector<std::vector<Var>> attention;

  Var final_state() const { return states.back(); }
};

// Runs the decoder stack. rng may be null in eval mode.
template <std::floating_point Real>
ForwardTrace forward(Graph<Real>& g, const BoundParams& p, const ModelConfig& config,
                     std::span<const int> ids, Mode mode, Rng* rng) {
  if (ids.empty()) throw InputError("forward: empty token sequence");
  if (ids.size() > config.context) {
    throw InputError(detail::concat("forward: sequence of ", ids.size(),
                                    " tokens exceeds context length ", config.context));
  }
  const bool training = mode == Mode::kTrain;
  if (training && rng == nullptr) throw UsageError("forward: train mode needs a generator");
  Rng unused;
  Rng& r = rng ? *rng : unused;

  const Real resid = static_cast<Real>(config.dropout_residual);
  const Real attn = static_cast<Real>(config.dropout_attention);
  const std::size_t n = ids.size(), heads = config.heads, hw = config.head_width();
  const Real score_scale = Real(1) / std::sqrt(static_cast<Real>(hw));

  ForwardTrace trace;
  Var h = g.add(g.gather_rows(p.token_embedding, ids), g.slice_rows(p.position_embedding, 0, n));
  trace.states.push_back(h);
  h = g.dropout(h, resid, training, r);

  for (const auto& b : p.blocks) {
    const Var q = g.matmul(h, b.query);
    const Var k = g.matmul(h, b.key);
    const Var v = g.matmul(h, b.value);
    std::vector<Var> head_out;
    std::vector<Var> head_weights;
    for (std::size_t a = 0; a < heads; ++a) {
      const Var qa = g.slice_cols(q, a * hw, hw);
      const Var ka = g.slice_cols(k, a * hw, hw);
      const Var va = g.slice_cols(v, a * hw, hw);
      const Var weights = g.causal_softmax(g.scale(g.matmul_nt(qa, ka), score_scale));
      head_weights.push_back(weights);
      head_out.push_back(g.matmul(g.dropout(weights, attn, training, r), va));
    }
    trace.attention.push_back(std::move(head_weights));
    const Var mixed = heads == 1 ? head_out[0] : g.concat_cols(head_out);
    const Var attended = g.dropout(g.matmul(mixed, b.output), resid, training, r);
    const Var a1 = g.layernorm(g.add(h, attended), b.ln1_gain, b.ln1_bias);
    const Var inner = g.gelu(g.add_row(g.matmul(a1, b.ff_in), b.ff_in_bias));
    const Var ff = g.dropout(g.add_row(g.matmul(inner, b.ff_out), b.ff_out_bias), resid,
                             training, r);
    h = g.layernorm(g.add(a1, ff), b.ln2_gain, b.ln2_bias);
    trace.states.push_back(h);
  }
  return trace;
}

// Next-token logits, h_L * W_e^T (tied with the input embedding).
template <std::floating_point Real>
Var lm_logits(Graph<Real>& g, const BoundParams& p, const ForwardTrace& trace) {
  return g.matmul_nt(trace.final_state(), p.token_embedding);
}

// Mean negative log-likelihood of ids[i+1] given ids[0..i] over positions i
// with loss_mask[i] set (the last position has no target and never counts).
template <std::floating_point Real>
Var lm_loss_from_trace(Graph<Real>& g, const BoundParams& p, const ForwardTrace& trace,
                       std::span<const int> ids, std::span<const std::uint8_t> loss_mask) {
  if (ids.size() < 2) throw UsageError("lm_loss: need at least 2 tokens");
  if (loss_mask.size() != ids.size()) {
    throw ShapeError(detail::concat("lm_loss: mask has ", loss_mask.size(),
                                    " entries for ", ids.size(), " tokens"));
  }
  const std::size_t n = ids.size();
  const Var logits = lm_logits(g, p, trace);
  const Var predicting = g.slice_rows(logits, 0, n - 1);
  std::vector<int> targets(ids.begin() + 1, ids.end());
  return g.cross_entropy(predicting, targets, loss_mask.first(n - 1));
}

template <std::floating_point Real>
Var lm_loss(Graph<Real>& g, const BoundParams& p, const ModelConfig& config,
            std::span<const int> ids, std::span<const std::uint8_t> loss_mask, Mode mode, Rng* rng) {
  if (ids.size() < 2) throw UsageError("lm_loss: need at least 2 tokens");
  const ForwardTrace trace = forward(g, p, config, ids, mode, rng);
  return lm_loss_from_trace(g, p, trace, ids, loss_mask);
}

// Eval-mode evaluation of the states without keeping a graph around.
template <std::floating_point Real>
struct TraceValues {
  std::vector<Tensor<Real>> states;
  std::vector<std::vector<Tensor<Real>>> attention;
};

template <std::floating_point Real>
TraceValues<Real> evaluate_trace(const Parameters<Real>& params, const ModelConfig& config,
                                 std::span<const int> ids) {
  Graph<Real> g;
  const BoundParams p = bind(g, params, static_cast<Parameters<Real>*>(nullptr));
  const ForwardTrace trace = forward(g, p, config, ids, Mode::kEval, nullptr);
  TraceValues<Real> out;
  for (Var s : trace.states) out.states.push_back(g.value(s));
  for (const auto& block : trace.attention) {
    std::vector<Tensor<Real>> heads;
    for (Var w : block) heads.push_back(g.value(w));
    out.attention.push_back(std::move(heads));
  }
  return out;
}

}  // namespace distre

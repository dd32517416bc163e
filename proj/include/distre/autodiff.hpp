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
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "distre/error.hpp"
#include "distre/random.hpp"
#include "distre/tensor.hpp"

namespace distre {

// Handle to a node of a Graph.
struct Var {
  std::size_t index = 0;
};

inline constexpr double kLayerNormEpsilon = 1e-5;

// Tape-based reverse-mode differentiation over 2-D tensors. Nodes are appended
// in evaluation order, so the tape order is already topological. Leaves bound
// to parameters read the parameter storage in place and deposit their
// gradient into a caller-supplied sink when backward() runs.
template <std::floating_point Real>
class Graph {
 public:
  using T = Tensor<Real>;

  Graph() { nodes_.reserve(256); }

  Var leaf(const T& value, T* grad_sink) {
    Node n;
    n.external = &value;
    n.sink = grad_sink;
    n.requires_grad = grad_sink != nullptr;
    return push(std::move(n));
  }

  Var constant(T value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  const T& value(Var v) const {
    const Node& n = nodes_[v.index];
    return n.external ? *n.external : n.value;
  }

  // Gradient accumulated at a node by the last backward(); empty if none.
  const T& grad(Var v) const { return nodes_[v.index].grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  // ---------------------------------------------------------------- algebra

  // (m x k) * (k x n)
  Var matmul(Var a, Var b) {
    const T& A = value(a);
    const T& B = value(b);
    if (A.cols() != B.rows()) {
      throw ShapeError(detail::concat("matmul: inner dims differ, expected ",
                                      A.cols(), " rows in rhs, got ", B.rows()));
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    T out = T::matrix(m, n);
    gemm_nn(A.data(), B.data(), out.data(), m, k, n);
    return op(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const T& dy) {
      if (g.needs(a)) {
        // dA += dY * B^T
        gemm_nt(dy.data(), g.value(b).data(), g.grad_ref(a).data(), m, n, k);
      }
      if (g.needs(b)) {
        // dB += A^T * dY
        gemm_tn(g.value(a).data(), dy.data(), g.grad_ref(b).data(), m, k, n);
      }
    });
  }

  // (m x k) * (n x k)^T
  Var matmul_nt(Var a, Var b) {
    const T& A = value(a);
    const T& B = value(b);
    if (A.cols() != B.cols()) {
      throw ShapeError(detail::concat("matmul_nt: inner dims differ, expected ",
                                      A.cols(), " cols in rhs, got ", B.cols()));
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    T out = T::matrix(m, n);
    gemm_nt(A.data(), B.data(), out.data(), m, k, n);
    return op(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const T& dy) {
      if (g.needs(a)) {
        // dA += dY * B
        gemm_nn(dy.data(), g.value(b).data(), g.grad_ref(a).data(), m, n, k);
      }
      if (g.needs(b)) {
        // dB += dY^T * A
        gemm_tn(dy.data(), g.value(a).data(), g.grad_ref(b).data(), m, n, k);
      }
    });
  }

  Var transpose(Var a) {
    const T& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    T out = T::matrix(n, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
    return op(std::move(out), {a}, [a, m, n](Graph& g, const T& dy) {
      T& da = g.grad_ref(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da.at(i, j) += dy.at(j, i);
    });
  }

  Var add(Var a, Var b) {
    const T& A = value(a);
    A.require_same_shape(value(b), "add");
    T out = A;
    out += value(b);
    return op(std::move(out), {a, b}, [a, b](Graph& g, const T& dy) {
      if (g.needs(a)) g.grad_ref(a) += dy;
      if (g.needs(b)) g.grad_ref(b) += dy;
    });
  }

  // Adds a 1 x n row to every row of an m x n matrix.
  Var add_row(Var a, Var row) {
    const T& A = value(a);
    const T& R = value(row);
    if (R.size() != A.cols()) {
      throw ShapeError(detail::concat("add_row: expected row of width ", A.cols(),
                                      ", got ", shape_string(R.shape())));
    }
    T out = A;
    const std::size_t m = A.rows(), n = A.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += R[j];
    return op(std::move(out), {a, row}, [a, row, m, n](Graph& g, const T& dy) {
      if (g.needs(a)) g.grad_ref(a) += dy;
      if (g.needs(row)) {
        T& dr = g.grad_ref(row);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) dr[j] += dy.at(i, j);
      }
    });
  }

  Var mul(Var a, Var b) {
    const T& A = value(a);
    A.require_same_shape(value(b), "mul");
    T out = A;
    const T& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return op(std::move(out), {a, b}, [a, b](Graph& g, const T& dy) {
      if (g.needs(a)) {
        T& da = g.grad_ref(a);
        const T& B = g.value(b);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * B[i];
      }
      if (g.needs(b)) {
        T& db = g.grad_ref(b);
        const T& A = g.value(a);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * A[i];
      }
    });
  }

  Var scale(Var a, Real c) {
    T out = value(a);
    for (auto& v : out.values()) v *= c;
    return op(std::move(out), {a}, [a, c](Graph& g, const T& dy) {
      T& da = g.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += c * dy[i];
    });
  }

  // Sum of all elements, as a 1 x 1 tensor.
  Var sum(Var a) {
    const T& A = value(a);
    Real acc = 0;
    for (Real v : A.values()) acc += v;
    return op(T::scalar(acc), {a}, [a](Graph& g, const T& dy) {
      T& da = g.grad_ref(a);
      for (auto& v : da.values()) v += dy[0];
    });
  }

  // ------------------------------------------------------------ nonlinear

  // tanh approximation of GELU.
  Var gelu(Var a) {
    T out = value(a);
    for (auto& x : out.values()) x = gelu_value(x);
    return op(std::move(out), {a}, [a](Graph& g, const T& dy) {
      T& da = g.grad_ref(a);
      const T& A = g.value(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * gelu_slope(A[i]);
    });
  }

  // Row-wise softmax, stabilized by max subtraction.
  Var softmax(Var a) { return softmax_impl(a, false); }

  // Row-wise softmax of a square score matrix where row i only sees
  // columns 0..i; masked entries are exactly 0.
  Var causal_softmax(Var a) {
    const T& A = value(a);
    if (A.rows() != A.cols()) {
      throw ShapeError(detail::concat("causal_softmax: expected square scores, got ",
                                      shape_string(A.shape())));
    }
    return softmax_impl(a, true);
  }

  Var layernorm(Var x, Var gain, Var bias) {
    const T& X = value(x);
    const std::size_t m = X.rows(), n = X.cols();
    if (value(gain).size() != n || value(bias).size() != n) {
      throw ShapeError(detail::concat("layernorm: expected gain/bias of width ", n,
                                      ", got ", shape_string(value(gain).shape()),
                                      " and ", shape_string(value(bias).shape())));
    }
    T normed = T::matrix(m, n);
    std::vector<Real> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
      auto row = X.row_span(i);
      Real mean = 0;
      for (Real v : row) mean += v;
      mean /= static_cast<Real>(n);
      Real var = 0;
      for (Real v : row) var += (v - mean) * (v - mean);
      var /= static_cast<Real>(n);
      inv_std[i] = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEpsilon));
      for (std::size_t j = 0; j < n; ++j) normed.at(i, j) = (row[j] - mean) * inv_std[i];
    }
    const T& G = value(gain);
    const T& B = value(bias);
    T out = T::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = normed.at(i, j) * G[j] + B[j];
    return op(std::move(out), {x, gain, bias},
              [x, gain, bias, m, n, normed = std::move(normed),
               inv_std = std::move(inv_std)](Graph& g, const T& dy) {
                const T& G = g.value(gain);
                if (g.needs(gain)) {
                  T& dg = g.grad_ref(gain);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dg[j] += dy.at(i, j) * normed.at(i, j);
                }
                if (g.needs(bias)) {
                  T& db = g.grad_ref(bias);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) db[j] += dy.at(i, j);
                }
                if (g.needs(x)) {
                  T& dx = g.grad_ref(x);
                  const Real inv_n = Real(1) / static_cast<Real>(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    Real mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const Real d = dy.at(i, j) * G[j];
                      mean_d += d;
                      mean_dx += d * normed.at(i, j);
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for (std::size_t j = 0; j < n; ++j) {
                      const Real d = dy.at(i, j) * G[j];
                      dx.at(i, j) += inv_std[i] * (d - mean_d - normed.at(i, j) * mean_dx);
                    }
                  }
                }
              });
  }

  // Inverted dropout. Identity when !training or rate == 0.
  template <typename Rng>
  Var dropout(Var a, Real rate, bool training, Rng& rng) {
    if (!training || rate <= Real(0)) return a;
    if (rate >= Real(1)) {
      throw UsageError(detail::concat("dropout: rate must be in [0,1), got ", rate));
    }
    const T& A = value(a);
    T mask(A.shape());
    const Real keep_scale = Real(1) / (Real(1) - rate);
    for (auto& m : mask.values()) {
      m = uniform01(rng) < static_cast<double>(rate) ? Real(0) : keep_scale;
    }
    T out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return op(std::move(out), {a}, [a, mask = std::move(mask)](Graph& g, const T& dy) {
      T& da = g.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * mask[i];
    });
  }

  // ------------------------------------------------------------- indexing

  // Rows of a table selected by ids; output is ids.size() x table.cols().
  Var gather_rows(Var table, std::span<const int> ids) {
    const T& W = value(table);
    const std::size_t n = W.cols();
    T out = T::matrix(ids.size(), n);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= W.rows()) {
        throw ShapeError(detail::concat("gather_rows: id ", ids[i],
                                        " outside table of ", W.rows(), " rows"));
      }
      auto src = W.row_span(static_cast<std::size_t>(ids[i]));
      std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return op(std::move(out), {table}, [table, n, idx = std::move(idx)](Graph& g, const T& dy) {
      T& dw = g.grad_ref(table);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        Real* dst = dw.data() + static_cast<std::size_t>(idx[i]) * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += dy.at(i, j);
      }
    });
  }

  Var slice_rows(Var a, std::size_t start, std::size_t count) {
    const T& A = value(a);
    if (start + count > A.rows()) {
      throw ShapeError(detail::concat("slice_rows: rows [", start, ", ", start + count,
                                      ") outside ", shape_string(A.shape())));
    }
    const std::size_t n = A.cols();
    T out = T::matrix(count, n);
    std::copy(A.data() + start * n, A.data() + (start + count) * n, out.data());
    return op(std::move(out), {a}, [a, start, n](Graph& g, const T& dy) {
      T& da = g.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[start * n + i] += dy[i];
    });
  }

  Var slice_cols(Var a, std::size_t start, std::size_t count) {
    const T& A = value(a);
    if (start + count > A.cols()) {
      throw ShapeError(detail::concat("slice_cols: cols [", start, ", ", start + count,
                                      ") outside ", shape_string(A.shape())));
    }
    const std::size_t m = A.rows();
    T out = T::matrix(m, count);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) out.at(i, j) = A.at(i, start + j);
    return op(std::move(out), {a}, [a, start, m, count](Graph& g, const T& dy) {
      T& da = g.grad_ref(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) da.at(i, start + j) += dy.at(i, j);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = value(parts[0]).rows();
    std::size_t total = 0;
    for (Var p : parts) {
      if (value(p).rows() != m) {
        throw ShapeError(detail::concat("concat_cols: expected ", m, " rows, got ",
                                        value(p).rows()));
      }
      total += value(p).cols();
    }
    T out = T::matrix(m, total);
    std::size_t offset = 0;
    for (Var p : parts) {
      const T& P = value(p);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, offset + j) = P.at(i, j);
      offset += P.cols();
    }
    return op(std::move(out), parts, [parts, m](Graph& g, const T& dy) {
      std::size_t offset = 0;
      for (Var p : parts) {
        const std::size_t w = g.value(p).cols();
        if (g.needs(p)) {
          T& dp = g.grad_ref(p);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) dp.at(i, j) += dy.at(i, offset + j);
        }
        offset += w;
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t n = value(parts[0]).cols();
    std::size_t total = 0;
    for (Var p : parts) {
      if (value(p).cols() != n) {
        throw ShapeError(detail::concat("concat_rows: expected ", n, " cols, got ",
                                        value(p).cols()));
      }
      total += value(p).rows();
    }
    T out = T::matrix(total, n);
    std::size_t offset = 0;
    for (Var p : parts) {
      const T& P = value(p);
      std::copy(P.data(), P.data() + P.size(), out.data() + offset);
      offset += P.size();
    }
    return op(std::move(out), parts, [parts](Graph& g, const T& dy) {
      std::size_t offset = 0;
      for (Var p : parts) {
        const std::size_t sz = g.value(p).size();
        if (g.needs(p)) {
          T& dp = g.grad_ref(p);
          for (std::size_t i = 0; i < sz; ++i) dp[i] += dy[offset + i];
        }
        offset += sz;
      }
    });
  }

  // ---------------------------------------------------------------- losses

  // Mean over counted rows of -log softmax(logits)[row, target]. Returns 1 x 1.
  Var cross_entropy(Var logits, std::span<const int> targets,
                    std::span<const std::uint8_t> counted) {
    const T& L = value(logits);
    const std::size_t m = L.rows(), v = L.cols();
    if (targets.size() != m || counted.size() != m) {
      throw ShapeError(detail::concat("cross_entropy: expected ", m,
                                      " targets and mask entries, got ", targets.size(),
                                      " and ", counted.size()));
    }
    std::size_t count = 0;
    for (auto c : counted) count += c ? 1 : 0;
    if (count == 0) throw UsageError("cross_entropy: loss mask selects no positions");

    T probs = T::matrix(m, v);
    Real total = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!counted[i]) continue;
      const int t = targets[i];
      if (t < 0 || static_cast<std::size_t>(t) >= v) {
        throw ShapeError(detail::concat("cross_entropy: target ", t, " outside ", v,
                                        " classes"));
      }
      auto row = L.row_span(i);
      const Real mx = *std::max_element(row.begin(), row.end());
      Real z = 0;
      for (std::size_t j = 0; j < v; ++j) {
        probs.at(i, j) = std::exp(row[j] - mx);
        z += probs.at(i, j);
      }
      for (std::size_t j = 0; j < v; ++j) probs.at(i, j) /= z;
      total += -(row[static_cast<std::size_t>(t)] - mx - std::log(z));
    }
    const Real inv_count = Real(1) / static_cast<Real>(count);
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> cnt(counted.begin(), counted.end());
    return op(T::scalar(total * inv_count), {logits},
              [logits, m, v, inv_count, probs = std::move(probs), tgt = std::move(tgt),
               cnt = std::move(cnt)](Graph& g, const T& dy) {
                T& dl = g.grad_ref(logits);
                const Real s = dy[0] * inv_count;
                for (std::size_t i = 0; i < m; ++i) {
                  if (!cnt[i]) continue;
                  for (std::size_t j = 0; j < v; ++j) dl.at(i, j) += s * probs.at(i, j);
                  dl.at(i, static_cast<std::size_t>(tgt[i])) -= s;
                }
              });
  }

  // --------------------------------------------------------------- backward

  // Propagates d(loss)/d(node) through the tape and adds each parameter
  // leaf's gradient to its sink. Sinks accumulate across calls.
  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw UsageError(detail::concat("backward: loss must be scalar, got shape ",
                                      shape_string(value(loss).shape())));
    }
    for (auto& n : nodes_) n.grad = T();
    if (!nodes_[loss.index].requires_grad) return;
    grad_ref(loss)[0] = Real(1);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        // Closures may touch other nodes' grads but never this node's.
        n.backward(*this, n.grad);
      } else if (n.sink) {
        *n.sink += n.grad;
      }
    }
  }

 private:
  using Backward = std::function<void(Graph&, const T&)>;

  struct Node {
    T value;
    const T* external = nullptr;
    T grad;
    T* sink = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var op(T out, std::initializer_list<Var> inputs, Backward fn) {
    return op(std::move(out), std::vector<Var>(inputs), std::move(fn));
  }

  Var op(T out, const std::vector<Var>& inputs, Backward fn) {
    Node n;
    n.value = std::move(out);
    for (Var v : inputs) n.requires_grad = n.requires_grad || nodes_[v.index].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  bool needs(Var v) const { return nodes_[v.index].requires_grad; }

  T& grad_ref(Var v) {
    Node& n = nodes_[v.index];
    if (n.grad.empty()) n.grad = T(value(v).shape());
    return n.grad;
  }

  Var softmax_impl(Var a, bool causal) {
    const T& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    T out = T::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t visible = causal ? i + 1 : n;
      auto row = A.row_span(i);
      Real mx = row[0];
      for (std::size_t j = 1; j < visible; ++j) mx = std::max(mx, row[j]);
      Real z = 0;
      for (std::size_t j = 0; j < visible; ++j) {
        out.at(i, j) = std::exp(row[j] - mx);
        z += out.at(i, j);
      }
      for (std::size_t j = 0; j < visible; ++j) out.at(i, j) /= z;
    }
    return op(std::move(out), {a}, [a, m, n, self = nodes_.size()](Graph& g, const T& dy) {
      const T& y = g.nodes_[self].value;
      T& da = g.grad_ref(a);
      for (std::size_t i = 0; i < m; ++i) {
        Real inner = 0;
        for (std::size_t j = 0; j < n; ++j) inner += dy.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < n; ++j) da.at(i, j) += y.at(i, j) * (dy.at(i, j) - inner);
      }
    });
  }

  static Real gelu_value(Real x) {
    constexpr Real c = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
    constexpr Real k = static_cast<Real>(0.044715);
    return Real(0.5) * x * (Real(1) + std::tanh(c * (x + k * x * x * x)));
  }

  static Real gelu_slope(Real x) {
    constexpr Real c = static_cast<Real>(0.7978845608028654);
    constexpr Real k = static_cast<Real>(0.044715);
    const Real t = std::tanh(c * (x + k * x * x * x));
    return Real(0.5) * (Real(1) + t) +
           Real(0.5) * x * (Real(1) - t * t) * c * (Real(1) + Real(3) * k * x * x);
  }

  // C(m x n) += A(m x k) * B(k x n)
  static void gemm_nn(const Real* A, const Real* B, Real* C, std::size_t m,
                      std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
      Real* c = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const Real a = A[i * k + p];
        const Real* b = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
      }
    }
  }

  // C(m x n) += A(m x k) * B(n x k)^T
  static void gemm_nt(const Real* A, const Real* B, Real* C, std::size_t m,
                      std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
      const Real* a = A + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const Real* b = B + j * k;
        Real acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p];
        C[i * n + j] += acc;
      }
    }
  }

  // C(k x n) += A(m x k)^T * B(m x n)
  static void gemm_tn(const Real* A, const Real* B, Real* C, std::size_t m,
                      std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
      const Real* b = B + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const Real a = A[i * k + p];
        Real* c = C + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace distre

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

#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "distre/autodiff.hpp"
#include "test_util.hpp"

namespace {

using distre::Graph;
using distre::Rng;
using distre::Var;
using distre::testing::check_gradients;
using distre::testing::random_tensor;
using distre::testing::TensorD;
using distre::testing::weighted_sum;

constexpr double kTolerance = 1e-6;

class AutodiffGradTest : public ::testing::Test {
 protected:
  Rng rng{2024};
};

TEST_F(AutodiffGradTest, Matmul) {
  std::vector<TensorD> in = {random_tensor(3, 4, rng), random_tensor(4, 5, rng)};
  auto r = check_gradients(in, [](Graph<double>& g, const std::vector<Var>& x) {
    return weighted_sum(g, g.matmul(x[0], x[1]));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, MatmulTransposed) {
  std::vector<TensorD> in = {random_tensor(3, 4, rng), random_tensor(5, 4, rng)};
  auto r = check_gradients(in, [](Graph<double>& g, const std::vector<Var>& x) {
    return weighted_sum(g, g.matmul_nt(x[0], x[1]));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, ElementwiseAndTranspose) {
  std::vector<TensorD> in = {random_tensor(3, 4, rng), random_tensor(3, 4, rng),
                             random_tensor(1, 4, rng)};
  auto r = check_gradients(in, [](Graph<double>& g, const std::vector<Var>& x) {
    Var y = g.add_row(g.mul(g.add(x[0], x[1]), x[0]), x[2]);
    return weighted_sum(g, g.transpose(g.scale(y, -1.5)));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, Gelu) {
  std::vector<TensorD> in = {random_tensor(4, 6, rng, 3.0)};
  auto r = check_gradients(in, [](Graph<double>& g, const std::vector<Var>& x) {
    return weighted_sum(g, g.gelu(x[0]));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, Softmaxes) {
  std::vector<TensorD> in = {random_tensor(5, 5, rng, 2.0)};
  auto r = check_gradients(in, [](Graph<double>& g, const std::vector<Var>& x) {
    return g.add(weighted_sum(g, g.softmax(x[0]), 1), weighted_sum(g, g.causal_softmax(x[0]), 2));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, LayerNorm) {
  std::vector<TensorD> in = {random_tensor(3, 6, rng, 2.0), random_tensor(1, 6, rng),
                             random_tensor(1, 6, rng)};
  auto r = check_gradients(in, [](Graph<double>& g, const std::vector<Var>& x) {
    return weighted_sum(g, g.layernorm(x[0], x[1], x[2]));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, DropoutWithFixedMask) {
  std::vector<TensorD> in = {random_tensor(4, 5, rng)};
  auto r = check_gradients(in, [](Graph<double>& g, const std::vector<Var>& x) {
    Rng local(5);
    return weighted_sum(g, g.dropout(x[0], 0.3, true, local));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, Indexing) {
  std::vector<TensorD> in = {random_tensor(6, 4, rng), random_tensor(3, 4, rng)};
  const std::vector<int> ids = {2, 0, 2, 5};
  auto r = check_gradients(in, [&](Graph<double>& g, const std::vector<Var>& x) {
    Var rows = g.gather_rows(x[0], ids);                        // 4 x 4
    Var stacked = g.concat_rows({rows, x[1]});                  // 7 x 4
    Var left = g.slice_cols(stacked, 0, 3);                     // 7 x 3
    Var right = g.slice_rows(g.slice_cols(stacked, 1, 3), 2, 5);  // 5 x 3
    Var joined = g.concat_cols({g.slice_rows(left, 0, 5), right});
    return weighted_sum(g, joined);
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST_F(AutodiffGradTest, CrossEntropyWithMask) {
  std::vector<TensorD> in = {random_tensor(4, 7, rng, 2.0)};
  const std::vector<int> targets = {3, 0, 6, 2};
  const distre::LossMask counted = {1, 0, 1, 1};
  auto r = check_gradients(in, [&](Graph<double>& g, const std::vector<Var>& x) {
    return g.cross_entropy(x[0], targets, counted);
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST(AutodiffTest, SoftmaxRowsSumToOneAndCausalMaskIsExact) {
  Rng rng(1);
  Graph<double> g;
  Var x = g.constant(random_tensor(5, 5, rng, 10.0));
  const auto& s = g.value(g.softmax(x));
  const auto& c = g.value(g.causal_softmax(x));
  for (std::size_t i = 0; i < 5; ++i) {
    double rs = 0, rc = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      rs += s.at(i, j);
      rc += c.at(i, j);
      if (j > i) {
        EXPECT_EQ(c.at(i, j), 0.0);
      }
    }
    EXPECT_NEAR(rs, 1.0, 1e-12);
    EXPECT_NEAR(rc, 1.0, 1e-12);
  }
  EXPECT_EQ(c.at(0, 0), 1.0);
}

TEST(AutodiffTest, SoftmaxIsStableForLargeInputs) {
  Graph<double> g;
  Var x = g.constant(TensorD::row({1000.0, 1000.0, -1000.0}));
  const auto& s = g.value(g.softmax(x));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_EQ(s[2], 0.0);
}

TEST(AutodiffTest, DropoutIsIdentityInEvalAndScalesInTraining) {
  Rng rng(3);
  Graph<double> g;
  TensorD ones = TensorD::matrix(100, 100, 1.0);
  Var x = g.constant(ones);
  Var same = g.dropout(x, 0.5, false, rng);
  EXPECT_EQ(same.index, x.index);
  const auto& y = g.value(g.dropout(x, 0.25, true, rng));
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.25, 0.02);
}

TEST(AutodiffTest, LayerNormNormalizesRows) {
  Rng rng(4);
  Graph<double> g;
  Var x = g.constant(random_tensor(3, 8, rng, 5.0));
  Var y = g.layernorm(x, g.constant(TensorD::matrix(1, 8, 1.0)), g.constant(TensorD::matrix(1, 8)));
  const auto& v = g.value(y);
  for (std::size_t i = 0; i < 3; ++i) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mean += v.at(i, j) / 8;
    for (std::size_t j = 0; j < 8; ++j) var += (v.at(i, j) - mean) * (v.at(i, j) - mean) / 8;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(AutodiffTest, GradientsAccumulateIntoSinks) {
  TensorD a = TensorD::row({1.0, 2.0});
  TensorD grad(a.shape());
  for (int round = 0; round < 2; ++round) {
    Graph<double> g;
    Var x = g.leaf(a, &grad);
    g.backward(g.sum(g.scale(x, 3.0)));
  }
  EXPECT_DOUBLE_EQ(grad[0], 6.0);
  EXPECT_DOUBLE_EQ(grad[1], 6.0);
}

TEST(AutodiffTest, Errors) {
  Graph<double> g;
  Var a = g.constant(TensorD::matrix(2, 3));
  Var b = g.constant(TensorD::matrix(2, 3));
  EXPECT_THROW(g.matmul(a, b), distre::ShapeError);
  EXPECT_THROW(g.backward(a), distre::UsageError);
  const std::vector<int> bad_ids = {5};
  EXPECT_THROW(g.gather_rows(a, bad_ids), distre::ShapeError);
  const std::vector<int> t = {0, 1};
  const distre::LossMask none = {0, 0};
  EXPECT_THROW(g.cross_entropy(a, t, none), distre::UsageError);
}

}  // namespace

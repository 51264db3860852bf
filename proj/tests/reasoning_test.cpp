#include <gtest/gtest.h>

#include <random>

#include "ccg/reasoning.hpp"
#include "support/fd.hpp"

using namespace ccg;
using ccg::testing::numeric_gradient;
using ccg::testing::random_tensor;
using ccg::testing::relative_error;

namespace {

// Entry-wise sums for the bilinear form f_u(a)^T W f_v(b).
Tensor affinity_oracle(const Tensor& fu, const Tensor& fv, const Tensor& w) {
  const int c = fu.dim(0), hw = fu.dim(1) * fu.dim(2);
  Tensor out({hw, hw});
  for (int a = 0; a < hw; ++a) {
    for (int b = 0; b < hw; ++b) {
      double s = 0;
      for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) s += fu.data[i * hw + a] * w.at(i, j) * fv.data[j * hw + b];
      }
      out.at(a, b) = s;
    }
  }
  return out;
}

Tensor identity(int c) {
  Tensor t({c, c});
  for (int i = 0; i < c; ++i) t.at(i, i) = 1.0;
  return t;
}

std::vector<FeatureMap> random_features(int n, Shape shape, std::mt19937_64& rng) {
  std::vector<FeatureMap> out;
  for (int i = 0; i < n; ++i) out.push_back({random_tensor(shape, rng), 8});
  return out;
}

}  // namespace

TEST(Affinity, ZeroWeightGivesZeroMatrix) {
  std::mt19937_64 rng(1);
  const Tensor f = random_tensor({3, 2, 2}, rng);
  EXPECT_EQ(affinity(f, f, Tensor({3, 3})).values, Tensor({4, 4}));
}

TEST(Affinity, OrthonormalColumnsGiveIdentity) {
  // columns are the standard basis of R^3
  Tensor f({3, 1, 3});
  for (int i = 0; i < 3; ++i) f.at(i, 0, i) = 1.0;
  EXPECT_EQ(affinity(f, f, identity(3)).values, identity(3));
}

TEST(Affinity, HandComputedTwoByTwo) {
  const Tensor fu({2, 1, 2}, {1, 2, 3, 4});
  const Tensor fv({2, 1, 2}, {0, 1, 1, 0});
  const Tensor w({2, 2}, {1, 0, 0, 2});
  EXPECT_EQ(affinity(fu, fv, w).values, Tensor({2, 2}, {6, 1, 8, 2}));
}

TEST(Affinity, MatchesOracleAndIsBilinear) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor fu = random_tensor({3, 2, 3}, rng), fv = random_tensor({3, 2, 3}, rng);
    const Tensor w = random_tensor({3, 3}, rng);
    const Tensor p = affinity(fu, fv, w).values;
    const Tensor expected = affinity_oracle(fu, fv, w);
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(p.data[i], expected.data[i], 1e-12);

    Tensor scaled = fu;
    for (double& v : scaled.data) v *= -2.5;
    const Tensor ps = affinity(scaled, fv, w).values;
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(ps.data[i], -2.5 * p.data[i], 1e-12);
  }
  EXPECT_THROW(affinity(Tensor({2, 2, 2}), Tensor({3, 2, 2}), identity(2)), Error);
}

TEST(Attend, ZeroAffinityAveragesColumns) {
  std::mt19937_64 rng(3);
  const Tensor fu = random_tensor({2, 2, 2}, rng), fv = random_tensor({2, 2, 2}, rng);
  const AttendedPair a = attend(fu, fv, {Tensor({4, 4})});
  for (int ch = 0; ch < 2; ++ch) {
    double mean = 0;
    for (int i = 0; i < 4; ++i) mean += fu.data[ch * 4 + i] / 4;
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(a.features_u.data[ch * 4 + i], mean, 1e-12);
  }
  EXPECT_EQ(a.features_u.shape, fu.shape);
  EXPECT_EQ(a.features_v.shape, fv.shape);
}

TEST(Attend, SaturatedColumnSelectsOneInput) {
  std::mt19937_64 rng(4);
  const Tensor fu = random_tensor({3, 1, 4}, rng), fv = random_tensor({3, 1, 4}, rng);
  Tensor p({4, 4});
  p.at(2, 1) = 1e6;  // column 1 picks input column 2
  const AttendedPair a = attend(fu, fv, {p});
  for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(a.features_u.data[ch * 4 + 1], fu.data[ch * 4 + 2], 1e-9);
}

TEST(Attend, ColumnsAreStochasticAndOutputsStayInTheHull) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor fu = random_tensor({4, 3, 3}, rng), fv = random_tensor({4, 3, 3}, rng);
    const AttendedPair a = attend(fu, fv, affinity(fu, fv, random_tensor({4, 4}, rng, -3, 3)));
    for (const Tensor* s : {&a.attention_u, &a.attention_v}) {
      for (int col = 0; col < 9; ++col) {
        double sum = 0;
        for (int row = 0; row < 9; ++row) sum += s->at(row, col);
        ASSERT_NEAR(sum, 1.0, 1e-9);
      }
    }
    for (const auto& [in, out] : {std::pair{&fu, &a.features_u}, std::pair{&fv, &a.features_v}}) {
      for (int ch = 0; ch < 4; ++ch) {
        const auto first = in->data.begin() + ch * 9;
        const double lo = *std::min_element(first, first + 9), hi = *std::max_element(first, first + 9);
        for (int i = 0; i < 9; ++i) {
          ASSERT_GE(out->data[ch * 9 + i], lo - 1e-12);
          ASSERT_LE(out->data[ch * 9 + i], hi + 1e-12);
        }
      }
    }
  }
}

TEST(ColumnSoftmax, ColumnsSumToOne) {
  std::mt19937_64 rng(6);
  const Tensor s = column_softmax(random_tensor({5, 7}, rng, -50, 50));
  for (int col = 0; col < 7; ++col) {
    double sum = 0;
    for (int row = 0; row < 5; ++row) sum += s.at(row, col);
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(EnhancedPatchGraph, Examples) {
  std::mt19937_64 rng(7);
  const Tensor f = random_tensor({6, 4, 4}, rng);
  const PatchGraph self = enhanced_patch_graph(f, f, 4);
  for (int l = 0; l < 4; ++l) EXPECT_EQ(self.values.at(l, l), 0.0);
  EXPECT_EQ(enhanced_patch_graph(Tensor({6, 4, 4}, 0.3), Tensor({6, 4, 4}, -1.0), 4).values, Tensor({4, 4}));
  EXPECT_THROW(enhanced_patch_graph(f, f, 3), Error);
}

TEST(EnhancedPatchGraph, HandComputedCodes) {
  // two single-cell blocks, channels in [c, 1, 2] layout
  const Tensor u({4, 1, 2}, {1, 4, 5, 0, 2, 9, 7, 3});
  const Tensor v({4, 1, 2}, {1, 8, 5, 9, 2, 1, 7, 0});
  // u blocks: 0b1010, 0b0101; v blocks: 0b1010, 0b0011
  EXPECT_EQ(enhanced_patch_graph(u, v, 2).values, Tensor({2, 2}, {0, 2, 4, 2}));
}

TEST(BlockLayout, PicksNearSquareTiling) {
  EXPECT_EQ(block_layout(16, 8, 8), (GridSize{4, 4}));
  EXPECT_EQ(block_layout(2, 8, 8), (GridSize{1, 2}));
  EXPECT_EQ(block_layout(8, 8, 8), (GridSize{2, 4}));
  EXPECT_THROW(block_layout(16, 6, 6), Error);
}

TEST(KrLoss, Examples) {
  std::mt19937_64 rng(8);
  KnowledgeReasoning kr(3, 4);
  const FeatureMap f{random_tensor({3, 4, 4}, rng), 8};
  EXPECT_EQ(kr.loss({f, f}, nullptr), 0.0);
  const FeatureMap zero{Tensor({3, 4, 4}), 8};
  EXPECT_EQ(kr.loss({zero, zero}, nullptr), 0.0);

  // zero aggregator: uniform weights over each row of two
  const FeatureMap g{random_tensor({3, 4, 4}, rng), 8};
  const AttendedPair a = attend(f.values, g.values, affinity(f.values, g.values, identity(3)));
  const double d = feature_distance(a.features_u, a.features_v);
  EXPECT_GT(d, 0.0);
  EXPECT_NEAR(kr.loss({f, g}, nullptr), d / 4, 1e-12);
}

TEST(KrLoss, GradientsMatchFiniteDifferencesWithFrozenGraphs) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    KnowledgeReasoning kr(3, 4);
    kr.affinity_weight().value = random_tensor({3, 3}, rng, -0.5, 1.0);
    kr.aggregator().weight().value = random_tensor({16}, rng);
    auto f = random_features(3, {3, 4, 4}, rng);

    KnowledgeReasoning::PairGraphs graphs;
    kr.loss(f, nullptr, nullptr, &graphs);
    auto loss = [&] { return kr.loss(f, nullptr, &graphs); };

    std::vector<Param*> params;
    kr.collect_params(params);
    for (Param* p : params) p->zero_grad();
    KnowledgeReasoning::Grad grad;
    kr.loss(f, &grad, &graphs);

    EXPECT_LT(relative_error(kr.affinity_weight().grad.data, numeric_gradient(loss, kr.affinity_weight().value.data)),
              1e-4);
    auto& w = kr.aggregator().weight();
    EXPECT_LT(relative_error(w.grad.data, numeric_gradient(loss, w.value.data)), 1e-4);
    for (int i = 0; i < 3; ++i) {
      EXPECT_LT(relative_error(grad.d_features[i].data, numeric_gradient(loss, f[i].values.data)), 1e-4);
    }
  }
}

TEST(KrLoss, RejectsChannelMismatch) {
  KnowledgeReasoning kr(3, 4);
  EXPECT_THROW(kr.loss({{Tensor({2, 4, 4}), 8}, {Tensor({2, 4, 4}), 8}}, nullptr), Error);
}

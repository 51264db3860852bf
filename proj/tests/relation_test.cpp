#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ccg/relation.hpp"
#include "support/fd.hpp"

using namespace ccg;
using ccg::testing::numeric_gradient;
using ccg::testing::random_tensor;
using ccg::testing::relative_error;

namespace {

// Direct double loop over the loss definition.
double contrast_oracle(const Tensor& raw, const std::vector<FeatureMap>& f) {
  const int n = raw.dim(0);
  double total = 0;
  for (int u = 0; u < n; ++u) {
    double z = 0;
    for (int v = 0; v < n; ++v) z += std::exp(raw.at(u, v));
    for (int v = 0; v < n; ++v) {
      double d = 0;
      for (std::size_t i = 0; i < f[u].values.size(); ++i) {
        d += (f[u].values.data[i] - f[v].values.data[i]) * (f[u].values.data[i] - f[v].values.data[i]);
      }
      total += std::exp(raw.at(u, v)) / z * std::sqrt(d);
    }
  }
  return total / (n * n);
}

std::vector<FeatureMap> random_features(int n, std::mt19937_64& rng) {
  std::vector<FeatureMap> out;
  for (int i = 0; i < n; ++i) out.push_back({random_tensor({2, 3, 3}, rng), 8});
  return out;
}

}  // namespace

TEST(InitRelationGraph, UniformEntries) {
  for (int n : {1, 2, 4}) {
    const RelationGraph g = init_relation_graph(n);
    EXPECT_EQ(g.n(), n);
    for (double v : g.weights.value.data) EXPECT_DOUBLE_EQ(v, 1.0 / n);
  }
  EXPECT_THROW(init_relation_graph(0), Error);
  EXPECT_THROW(init_relation_graph(-2), Error);
}

TEST(FeatureDistance, Examples) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(feature_distance(a, a), 0.0);
  EXPECT_NEAR(feature_distance(Tensor({2, 3, 4}, 0.0), Tensor({2, 3, 4}, 1.0)), std::sqrt(24.0), 1e-12);
  for (int i = 0; i < 50; ++i) {
    const Tensor u = random_tensor({3, 2, 2}, rng), v = random_tensor({3, 2, 2}, rng);
    EXPECT_EQ(feature_distance(u, v), feature_distance(v, u));
  }
  EXPECT_THROW(feature_distance(Tensor({1, 2, 2}), Tensor({1, 2, 3})), Error);
}

TEST(RowSoftmax, RowsSumToOne) {
  std::mt19937_64 rng(2);
  for (int n = 1; n <= 6; ++n) {
    const Tensor s = row_softmax(random_tensor({n, n}, rng, -30, 30));
    for (int u = 0; u < n; ++u) {
      double row = 0;
      for (int v = 0; v < n; ++v) {
        EXPECT_GE(s.at(u, v), 0.0);
        row += s.at(u, v);
      }
      EXPECT_NEAR(row, 1.0, 1e-9);
    }
  }
}

TEST(RowSoftmax, SkipDiagonalLeavesZeros) {
  std::mt19937_64 rng(3);
  const Tensor s = row_softmax(random_tensor({4, 4}, rng), true);
  for (int u = 0; u < 4; ++u) {
    EXPECT_EQ(s.at(u, u), 0.0);
    double row = 0;
    for (int v = 0; v < 4; ++v) row += s.at(u, v);
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
}

TEST(InterImageLoss, IdenticalFeaturesGiveZero) {
  std::mt19937_64 rng(4);
  const FeatureMap f{random_tensor({2, 3, 3}, rng), 8};
  RelationGraph g = init_relation_graph(3);
  g.weights.value = random_tensor({3, 3}, rng, -5, 5);
  EXPECT_EQ(inter_image_loss(g, {f, f, f}), 0.0);
  const FeatureMap zero{Tensor({2, 3, 3}), 8};
  EXPECT_EQ(inter_image_loss(g, {zero, zero, zero}), 0.0);
}

TEST(InterImageLoss, TwoImagesUniformGraphIsQuarterDistance) {
  std::mt19937_64 rng(5);
  const auto f = random_features(2, rng);
  const double d = feature_distance(f[0], f[1]);
  EXPECT_NEAR(inter_image_loss(init_relation_graph(2), f), d / 4, 1e-12);
}

TEST(InterImageLoss, MatchesDirectOracleAndIsNonNegative) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 4;
    RelationGraph g = init_relation_graph(n);
    g.weights.value = random_tensor({n, n}, rng, -3, 3);
    const auto f = random_features(n, rng);
    const double loss = inter_image_loss(g, f);
    EXPECT_GE(loss, 0.0);
    EXPECT_NEAR(loss, contrast_oracle(g.weights.value, f), 1e-12);
  }
}

TEST(InterImageLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    RelationGraph g = init_relation_graph(3);
    g.weights.value = random_tensor({3, 3}, rng, -2, 2);
    auto f = random_features(3, rng);
    ContrastGrad grad;
    inter_image_loss(g, f, &grad);
    auto loss = [&] { return inter_image_loss(g, f); };
    EXPECT_LT(relative_error(grad.d_weights.data, numeric_gradient(loss, g.weights.value.data)), 1e-4);
    for (int i = 0; i < 3; ++i) {
      EXPECT_LT(relative_error(grad.d_features[i].data, numeric_gradient(loss, f[i].values.data)), 1e-4);
    }
  }
}

TEST(ContrastLoss, SkipDiagonalUsesOffDiagonalPairsOnly) {
  std::mt19937_64 rng(8);
  const auto f = random_features(3, rng);
  const Tensor raw = random_tensor({3, 3}, rng);
  std::vector<const Tensor*> ptrs;
  for (const auto& m : f) ptrs.push_back(&m.values);
  const Tensor s = row_softmax(raw, true);
  double expected = 0;
  for (int u = 0; u < 3; ++u) {
    for (int v = 0; v < 3; ++v) expected += s.at(u, v) * feature_distance(f[u], f[v]);
  }
  EXPECT_NEAR(contrast_loss(raw, ptrs, true, nullptr), expected / 9, 1e-12);
}

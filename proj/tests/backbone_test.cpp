#include <gtest/gtest.h>

#include <random>

#include "ccg/backbone.hpp"
#include "ccg/head.hpp"
#include "support/fd.hpp"

using namespace ccg;
using ccg::testing::numeric_gradient;
using ccg::testing::random_tensor;
using ccg::testing::relative_error;

namespace {

BackboneConfig small_tiny() {
  BackboneConfig c;
  c.tiny_channels = {4, 6, 6, 8};
  return c;
}

// Sum of w * probs, the scalar used for head gradient checks.
double weighted_probs(const ClassHead& head, const FeatureMap& f, const Tensor& w) {
  const Tensor p = head.forward(f, nullptr).probs;
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += w.data[i] * p.data[i];
  return s;
}

}  // namespace

TEST(Backbone, TinyStrideGivesEightByEightGrid) {
  std::mt19937_64 rng(1);
  const Backbone b(small_tiny(), rng);
  EXPECT_EQ(b.stride(), 8);
  const FeatureMap f = b.forward(Tensor({3, 64, 64}, 0.3), nullptr);
  EXPECT_EQ(f.values.shape, (Shape{8, 8, 8}));
  EXPECT_EQ(f.stride, 8);
  EXPECT_EQ(f.stride * f.height(), 64);
}

TEST(Backbone, StrideSixteenVariant) {
  BackboneConfig c = small_tiny();
  c.tiny_strides = {2, 2, 2, 2};
  std::mt19937_64 rng(1);
  const Backbone b(c, rng);
  EXPECT_EQ(b.forward(Tensor({3, 64, 64}, 0.3), nullptr).values.shape, (Shape{8, 4, 4}));
}

TEST(Backbone, DeterministicOutputs) {
  std::mt19937_64 rng(5), data_rng(6);
  const Backbone b(small_tiny(), rng);
  const Tensor img = random_tensor({3, 64, 64}, data_rng, 0, 1);
  EXPECT_EQ(b.forward(img, nullptr).values, b.forward(img, nullptr).values);
}

TEST(Backbone, RejectsBadInputs) {
  std::mt19937_64 rng(1);
  const Backbone b(small_tiny(), rng);
  EXPECT_THROW(b.forward(Tensor({3, 64, 32}), nullptr), Error);
  EXPECT_THROW(b.forward(Tensor({3, 32, 32}), nullptr), Error);
  EXPECT_THROW(b.forward(Tensor({1, 64, 64}), nullptr), Error);
  BackboneConfig bad = small_tiny();
  bad.kind = "vgg";
  EXPECT_THROW(Backbone(bad, rng), Error);
}

TEST(Backbone, NormalizedOutputHasZeroMeanUnitNorm) {
  std::mt19937_64 rng(2), data_rng(3);
  const Backbone b(small_tiny(), rng);
  const Tensor v = b.forward(random_tensor({3, 64, 64}, data_rng, 0, 1), nullptr).values;
  double sum = 0, sq = 0;
  for (double x : v.data) {
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum, 0.0, 1e-9);
  EXPECT_NEAR(sq, 1.0, 1e-9);
}

TEST(Backbone, InputGradientMatchesFiniteDifferences) {
  BackboneConfig c = small_tiny();
  c.input_size = 16;
  c.tiny_channels = {3, 4, 4, 5};
  std::mt19937_64 rng(11), data_rng(12);
  Backbone b(c, rng);
  Tensor img = random_tensor({3, 16, 16}, data_rng, 0, 1);
  const Tensor w = random_tensor({5, 2, 2}, data_rng);
  auto f = [&] {
    const Tensor y = b.forward(img, nullptr).values;
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w.data[i] * y.data[i];
    return s;
  };
  LayerCache cache;
  b.forward(img, &cache);
  const Tensor dx = b.backward(w, cache);
  const auto numeric = numeric_gradient(f, img.data);
  EXPECT_LT(relative_error(dx.data, numeric), 1e-5);
}

TEST(MapNormalize, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  MapNormalize layer;
  Tensor x = random_tensor({3, 4, 5}, rng);
  const Tensor w = random_tensor({3, 4, 5}, rng);
  auto f = [&] {
    const Tensor y = layer.forward(x, nullptr);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w.data[i] * y.data[i];
    return s;
  };
  LayerCache cache;
  layer.forward(x, &cache);
  const Tensor dx = layer.backward(w, cache);
  EXPECT_LT(relative_error(dx.data, numeric_gradient(f, x.data)), 1e-7);
}

TEST(ClassHead, ShapesFollowChannelsAndClasses) {
  std::mt19937_64 rng(1);
  const ClassHead head(2048, 8, 14, rng);
  FeatureMap f{Tensor({2048, 16, 16}, 0.01), 32};
  EXPECT_EQ(head.forward(f, nullptr).probs.shape, (Shape{14, 16, 16}));
  FeatureMap wrong{Tensor({64, 16, 16}), 32};
  EXPECT_THROW(head.forward(wrong, nullptr), Error);
}

TEST(ClassHead, ZeroWeightsGiveOneHalf) {
  std::mt19937_64 rng(1);
  ClassHead head(6, 4, 3, rng);
  std::vector<Param*> params;
  head.collect_params(params);
  for (Param* p : params) p->value.fill(0.0);
  std::mt19937_64 data_rng(2);
  const Tensor probs = head.forward({random_tensor({6, 5, 5}, data_rng), 8}, nullptr).probs;
  for (double p : probs.data) EXPECT_EQ(p, 0.5);
}

TEST(ClassHead, ClampKeepsProbabilitiesInsideTheOpenInterval) {
  const double lo = clamped_sigmoid(-1e9), hi = clamped_sigmoid(1e9);
  EXPECT_GE(lo, 3e-7);
  EXPECT_LE(hi, 1 - 3e-7);
  std::mt19937_64 rng(8);
  std::cauchy_distribution<double> heavy(0.0, 20.0);
  for (int i = 0; i < 10000; ++i) {
    const double p = clamped_sigmoid(heavy(rng));
    ASSERT_GT(p, 0.0);
    ASSERT_LT(p, 1.0);
    ASSERT_GE(p, lo);
    ASSERT_LE(p, hi);
  }
}

TEST(ClassHead, WeightGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (double gain : {1.0, 3.0}) {
    ClassHead head(5, 4, 3, rng, gain);
    const FeatureMap f{random_tensor({5, 3, 3}, rng), 8};
    const Tensor w = random_tensor({3, 3, 3}, rng);
    std::vector<Param*> params;
    head.collect_params(params);
    HeadCache cache;
    head.forward(f, &cache);
    for (Param* p : params) p->zero_grad();
    head.backward(w, cache);
    for (Param* p : params) {
      const auto numeric = numeric_gradient([&] { return weighted_probs(head, f, w); }, p->value.data);
      EXPECT_LT(relative_error(p->grad.data, numeric), 1e-3) << p->name << " gain " << gain;
    }
  }
}

TEST(ClassHead, FeatureGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  ClassHead head(5, 4, 3, rng, 2.0);
  FeatureMap f{random_tensor({5, 3, 3}, rng), 8};
  const Tensor w = random_tensor({3, 3, 3}, rng);
  HeadCache cache;
  head.forward(f, &cache);
  const Tensor dx = head.backward(w, cache);
  EXPECT_LT(relative_error(dx.data, numeric_gradient([&] { return weighted_probs(head, f, w); }, f.values.data)),
            1e-6);
}

TEST(Upsample, FactorOneIsIdentity) {
  std::mt19937_64 rng(1);
  const FeatureMap f{random_tensor({3, 4, 4}, rng), 16};
  const FeatureMap g = upsample_features(f, 1);
  EXPECT_EQ(g.values, f.values);
  EXPECT_EQ(g.stride, 16);
}

TEST(Upsample, DoublesGridAndHalvesStride) {
  const FeatureMap g = upsample_features({Tensor({2, 16, 16}, 1.0), 32}, 2);
  EXPECT_EQ(g.values.shape, (Shape{2, 32, 32}));
  EXPECT_EQ(g.stride, 16);
}

TEST(Upsample, PreservesConstantMaps) {
  for (int factor : {2, 4, 8}) {
    const FeatureMap g = upsample_features({Tensor({2, 3, 3}, -0.75), 8}, factor);
    for (double v : g.values.data) EXPECT_NEAR(v, -0.75, 1e-12);
  }
}

TEST(Upsample, RejectsBadFactors) {
  EXPECT_THROW(upsample_features({Tensor({1, 2, 2}), 8}, 0), Error);
  EXPECT_THROW(upsample_features({Tensor({1, 2, 2}), 8}, 3), Error);
}

TEST(Backbone, Resnet50StrideAndChannels) {
  BackboneConfig c;
  c.kind = "resnet50";
  c.input_size = 64;
  c.normalize_output = false;
  std::mt19937_64 rng(1), data_rng(2);
  const Backbone b(c, rng);
  EXPECT_EQ(b.stride(), 32);
  EXPECT_EQ(b.out_channels(), 2048);
  const FeatureMap f = b.forward(random_tensor({3, 64, 64}, data_rng, 0, 1), nullptr);
  EXPECT_EQ(f.values.shape, (Shape{2048, 2, 2}));
  EXPECT_EQ(f.stride, 32);
  for (double v : f.values.data) ASSERT_TRUE(std::isfinite(v));
}

TEST(Backbone, Resnet50RejectsNonMultipleInput) {
  BackboneConfig c;
  c.kind = "resnet50";
  c.input_size = 48;
  std::mt19937_64 rng(1);
  EXPECT_THROW(Backbone(c, rng), Error);
}

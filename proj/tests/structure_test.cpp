#include <gtest/gtest.h>

#include <queue>
#include <random>

#include "ccg/structure.hpp"
#include "support/fd.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace ccg;
using ccg::testing::numeric_gradient;
using ccg::testing::random_tensor;
using ccg::testing::relative_error;

namespace {

std::vector<int> areas(const PatchSet& p) {
  std::vector<int> a(static_cast<std::size_t>(p.count), 0);
  for (int l : p.labels) ++a.at(static_cast<std::size_t>(l));
  return a;
}

// True when every label forms one 4-connected region.
bool contiguous(const PatchSet& p) {
  std::vector<int> seen(static_cast<std::size_t>(p.count), 0);
  std::vector<char> visited(p.labels.size(), 0);
  for (std::size_t start = 0; start < p.labels.size(); ++start) {
    if (visited[start]) continue;
    const int label = p.labels[start];
    if (seen[label]++) return false;
    std::queue<std::size_t> q;
    q.push(start);
    visited[start] = 1;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      const int y = static_cast<int>(i) / p.width, x = static_cast<int>(i) % p.width;
      const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || nx < 0 || ny >= p.height || nx >= p.width) continue;
        const std::size_t j = static_cast<std::size_t>(ny * p.width + nx);
        if (!visited[j] && p.labels[j] == label) {
          visited[j] = 1;
          q.push(j);
        }
      }
    }
  }
  return true;
}

Tensor blobs(int size, std::mt19937_64& rng) {
  Tensor g({size, size});
  std::uniform_real_distribution<double> u(0, 1);
  const double cy = u(rng) * size, cx = u(rng) * size, r = 8 + 10 * u(rng);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(y - cy, x - cx);
      g.at(y, x) = (d < r ? 0.8 : 0.2) + 0.05 * u(rng);
    }
  }
  return g;
}

std::vector<std::uint8_t> mask_of(const PatchSet& p, int label) {
  std::vector<std::uint8_t> m(p.labels.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = p.labels[i] == label;
  return m;
}

PatchHashes random_codes(int m, std::mt19937_64& rng) {
  PatchHashes h;
  for (int i = 0; i < m; ++i) h.codes.push_back(rng());
  return h;
}

}  // namespace

TEST(Slic, SinglePatchCoversImage) {
  std::mt19937_64 rng(1);
  const PatchSet p = slic_superpixels(blobs(32, rng), {1, 10.0, 10});
  EXPECT_EQ(p.count, 1);
  for (int l : p.labels) EXPECT_EQ(l, 0);
}

TEST(Slic, UniformImageSplitsIntoFourEqualRegions) {
  const PatchSet p = slic_superpixels(Tensor({64, 64}, 0.5), {4, 10.0, 10});
  ASSERT_EQ(p.count, 4);
  for (int a : areas(p)) {
    EXPECT_GE(a, 0.8 * 1024);
    EXPECT_LE(a, 1.2 * 1024);
  }
  EXPECT_TRUE(contiguous(p));
}

TEST(Slic, PartitionIsCompleteContiguousAndDeterministic) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor img = blobs(64, rng);
    for (int m : {4, 9, 16}) {
      const PatchSet p = slic_superpixels(img, {m, 10.0, 10});
      EXPECT_EQ(p.count, m);
      EXPECT_EQ(p.labels.size(), 64u * 64u);
      for (int a : areas(p)) EXPECT_GT(a, 0);
      EXPECT_TRUE(contiguous(p));
      EXPECT_EQ(p, slic_superpixels(img, {m, 10.0, 10}));
    }
  }
}

TEST(Slic, TooManyPatchesIsAnError) {
  EXPECT_THROW(slic_superpixels(Tensor({4, 4}, 0.1), {17, 10.0, 10}), Error);
  EXPECT_THROW(slic_superpixels(Tensor({4, 4}, 0.1), {0, 10.0, 10}), Error);
}

TEST(PatchHash, AnchorsAndStability) {
  // pinned regression anchors
  const Tensor flat({16, 16}, 0.3);
  std::vector<std::uint8_t> all(256, 1);
  EXPECT_EQ(patch_hash(flat, all), 0u);

  Tensor ramp({16, 16});
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) ramp.at(y, x) = x / 15.0;
  }
  EXPECT_EQ(patch_hash(ramp, all), 0xF0F0F0F0F0F0F0F0ULL);

  std::mt19937_64 rng(3);
  const Tensor noise = random_tensor({16, 16}, rng, 0, 1);
  EXPECT_EQ(patch_hash(noise, all), patch_hash(noise, all));
  EXPECT_THROW(patch_hash(noise, std::vector<std::uint8_t>(256, 0)), Error);
}

TEST(PatchHash, TranslationOfTheSamePatchKeepsTheCode) {
  std::mt19937_64 rng(4);
  const Tensor content = random_tensor({6, 5}, rng, 0, 1);
  Tensor a({32, 32}, 0.0), b({32, 32}, 0.0);
  std::vector<std::uint8_t> ma(32 * 32, 0), mb(32 * 32, 0);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 5; ++x) {
      a.at(3 + y, 2 + x) = content.at(y, x);
      b.at(20 + y, 17 + x) = content.at(y, x);
      ma[(3 + y) * 32 + 2 + x] = 1;
      mb[(20 + y) * 32 + 17 + x] = 1;
    }
  }
  EXPECT_EQ(hamming(patch_hash(a, ma), patch_hash(b, mb)), 0);
}

TEST(PatchHash, HashesOfAnUnchangedImageAreStable) {
  std::mt19937_64 rng(5);
  const Tensor img = blobs(64, rng);
  const PatchSet p = slic_superpixels(img, {16, 10.0, 10});
  const PatchHashes h = hash_patches(img, p);
  ASSERT_EQ(h.codes.size(), 16u);
  EXPECT_EQ(h, hash_patches(img, p));
  EXPECT_EQ(h.codes[3], patch_hash(img, mask_of(p, 3)));
}

TEST(Hamming, Examples) {
  EXPECT_EQ(hamming(0xDEADBEEF, 0xDEADBEEF), 0);
  EXPECT_EQ(hamming(0b1010, 0b1001), 2);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t a = rng(), b = rng();
    EXPECT_EQ(hamming(a, b), hamming(b, a));
    EXPECT_EQ(hamming(a, b), oracle::hamming_bits(a, b));
  }
}

TEST(PatchGraph, Examples) {
  const PatchGraph g = patch_graph({{0b00, 0b11}}, {{0b00, 0b01}});
  EXPECT_EQ(g.values, Tensor({2, 2}, {0, 1, 2, 1}));

  std::mt19937_64 rng(7);
  const PatchHashes h = random_codes(5, rng);
  const PatchGraph self = patch_graph(h, h);
  for (int l = 0; l < 5; ++l) EXPECT_EQ(self.values.at(l, l), 0.0);

  const PatchHashes same{std::vector<std::uint64_t>(4, 0x1234)};
  EXPECT_EQ(patch_graph(same, same).values, Tensor({4, 4}));
  EXPECT_THROW(patch_graph(random_codes(3, rng), random_codes(4, rng)), Error);
}

TEST(PatchGraph, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 16);
    const PatchHashes a = random_codes(m, rng), b = random_codes(m, rng);
    const PatchGraph g = patch_graph(a, b);
    const auto expected = oracle::hamming_table(a.codes, b.codes);
    for (int l = 0; l < m; ++l) {
      for (int p = 0; p < m; ++p) {
        ASSERT_EQ(g.values.at(l, p), expected[l][p]);
        ASSERT_GE(g.values.at(l, p), 0.0);
        ASSERT_LE(g.values.at(l, p), 64.0);
      }
    }
  }
}

TEST(PatchGraphAggregator, Examples) {
  PatchGraphAggregator agg("w", 2, 64.0);
  std::mt19937_64 rng(9);
  const PatchGraph g = patch_graph(random_codes(2, rng), random_codes(2, rng));
  agg.weight().value.fill(0.0);
  agg.bias().value.fill(0.0);
  EXPECT_EQ(agg.forward(g), 0.0);

  agg.weight().value.fill(1.0);
  EXPECT_EQ(agg.forward({Tensor({2, 2})}), 0.0);

  agg.weight().value.fill(1.0 / 4);
  EXPECT_NEAR(agg.forward({Tensor({2, 2}, 64.0)}), 1.0, 1e-12);

  EXPECT_THROW(agg.forward({Tensor({3, 3})}), Error);
}

TEST(IntraImageLoss, Examples) {
  std::mt19937_64 rng(10);
  const FeatureMap a{random_tensor({2, 2, 2}, rng), 8}, b{random_tensor({2, 2, 2}, rng), 8};
  const Tensor raw = random_tensor({2, 2}, rng);
  EXPECT_EQ(intra_image_loss(raw, {a, a}), 0.0);
  const FeatureMap zero{Tensor({2, 2, 2}), 8};
  EXPECT_EQ(intra_image_loss(raw, {zero, zero}), 0.0);
  EXPECT_NEAR(intra_image_loss(Tensor({2, 2}), {a, b}), feature_distance(a, b) / 4, 1e-12);
}

TEST(IntraImageLoss, GradientsReachAggregatorAndFeatures) {
  std::mt19937_64 rng(11);
  const int n = 3, m = 4;
  PatchGraphAggregator agg("w", m, 64.0);
  agg.weight().value = random_tensor({m * m}, rng);
  agg.bias().value = random_tensor({1}, rng);
  std::vector<PatchHashes> codes;
  for (int i = 0; i < n; ++i) codes.push_back(random_codes(m, rng));
  std::vector<std::vector<PatchGraph>> graphs(n, std::vector<PatchGraph>(n));
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) graphs[u][v] = patch_graph(codes[u], codes[v]);
  }
  std::vector<FeatureMap> f;
  for (int i = 0; i < n; ++i) f.push_back({random_tensor({2, 2, 2}, rng), 8});

  auto loss = [&] { return intra_image_loss(agg.pair_weights(graphs, false), f); };
  EXPECT_GE(loss(), 0.0);
  ContrastGrad grad;
  intra_image_loss(agg.pair_weights(graphs, false), f, &grad);
  agg.weight().zero_grad();
  agg.bias().zero_grad();
  agg.backward_pairs(graphs, grad.d_weights, false);
  EXPECT_LT(relative_error(agg.weight().grad.data, numeric_gradient(loss, agg.weight().value.data)), 1e-4);
  // a shared bias shifts every row equally and cancels in the softmax
  EXPECT_NEAR(agg.bias().grad.data[0], 0.0, 1e-12);
  EXPECT_NEAR(numeric_gradient(loss, agg.bias().value.data)[0], 0.0, 1e-9);
  for (int i = 0; i < n; ++i) {
    EXPECT_LT(relative_error(grad.d_features[i].data, numeric_gradient(loss, f[i].values.data)), 1e-4);
  }
}

TEST(PatchCache, RoundTrip) {
  std::mt19937_64 rng(12);
  Tensor img({3, 64, 64});
  const Tensor g = blobs(64, rng);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) img.at(c, y, x) = g.at(y, x);
    }
  }
  const SlicParams params{16, 10.0, 10};
  const PatchSummary s = summarize_patches(img, params);
  ccg::testing::TempDir dir("ccg_patch");
  const auto path = patch_cache_path(dir.path(), "img_01", params);
  EXPECT_NE(path, patch_cache_path(dir.path(), "img_01", {9, 10.0, 10}));
  EXPECT_FALSE(read_patch_cache(path).has_value());
  write_patch_cache(path, s);
  const auto back = read_patch_cache(path);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->patches, s.patches);
  EXPECT_EQ(back->hashes, s.hashes);
}

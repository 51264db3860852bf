#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccg/backbone.hpp"
#include "ccg/relation.hpp"

namespace ccg {

/// Superpixel partition: labels[y * width + x] in [0, count).
struct PatchSet {
  int height = 0;
  int width = 0;
  int count = 0;
  std::vector<int> labels;

  bool operator==(const PatchSet&) const = default;
};

struct PatchHashes {
  std::vector<std::uint64_t> codes;
  bool operator==(const PatchHashes&) const = default;
};

/// m x m matrix of patch-pair distances between two images.
struct PatchGraph {
  Tensor values;
  int size() const { return values.dim(0); }
};

struct SlicParams {
  int patches = 16;
  double compactness = 10.0;
  int iterations = 10;
};

/// SLIC over (intensity, y, x) of a [H, W] gray image: grid-seeded centers
/// nudged to the lowest local gradient, k-means restricted to 2S x 2S
/// windows, connectivity enforcement, then merging of the smallest or
/// splitting of the largest regions until exactly `patches` remain. Patches
/// are numbered by centroid (y, then x).
PatchSet slic_superpixels(const Tensor& gray, const SlicParams& params);

/// Average hash of the pixels under `mask` (one byte per pixel of `gray`):
/// crop to the mask's bounding box, fill unmasked pixels with the masked
/// mean, area-resample to 8 x 8 and set bit r*8+c when cell (r, c) is above
/// the median of the 64 cells. A constant patch hashes to 0.
std::uint64_t patch_hash(const Tensor& gray, std::span<const std::uint8_t> mask);

PatchHashes hash_patches(const Tensor& gray, const PatchSet& patches);

inline int hamming(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

/// values[l][p] = hamming(a.codes[l], b.codes[p]).
PatchGraph patch_graph(const PatchHashes& a, const PatchHashes& b);

/// A fully connected map from a flattened m x m patch graph (divided by
/// `scale`) to one scalar pair weight.
class PatchGraphAggregator {
 public:
  PatchGraphAggregator(const std::string& name, int patches, double scale);

  double forward(const PatchGraph& graph) const;
  void backward(const PatchGraph& graph, double d_out);

  /// Pair weights for every (u, v) of a batch; graphs[u][v] must be set for
  /// each pair used. Diagonal entries are left at 0 when `skip_diagonal`.
  Tensor pair_weights(const std::vector<std::vector<PatchGraph>>& graphs, bool skip_diagonal) const;
  void backward_pairs(const std::vector<std::vector<PatchGraph>>& graphs, const Tensor& d_weights,
                      bool skip_diagonal);

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  void collect_params(std::vector<Param*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  void check(const PatchGraph& graph) const;

  int patches_;
  double scale_;
  Param weight_;  // [m * m]
  Param bias_;    // [1]
};

/// Contrast-constrained loss with weights derived from patch structure.
double intra_image_loss(const Tensor& pair_weights, const std::vector<FeatureMap>& features,
                        ContrastGrad* grad = nullptr);

/// SLIC patches and their hashes for one image.
struct PatchSummary {
  PatchSet patches;
  PatchHashes hashes;
};

PatchSummary summarize_patches(const Tensor& image, const SlicParams& params);

/// Cache file for a PatchSummary, keyed by image id and SLIC settings.
std::filesystem::path patch_cache_path(const std::filesystem::path& dir, const std::string& image_id,
                                       const SlicParams& params);
void write_patch_cache(const std::filesystem::path& path, const PatchSummary& summary);
std::optional<PatchSummary> read_patch_cache(const std::filesystem::path& path);

}  // namespace ccg

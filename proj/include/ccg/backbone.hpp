#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "ccg/layers.hpp"

namespace ccg {

/// Backbone output for one image. `stride` is input pixels per cell.
struct FeatureMap {
  Tensor values;  // [c, h, w]
  int stride = 1;

  int channels() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
};

struct BackboneConfig {
  std::string kind = "tiny";  // "tiny" or "resnet50"
  int input_size = 64;
  std::vector<int> tiny_channels = {32, 64, 64, 128};
  std::vector<int> tiny_strides = {2, 2, 2, 1};
  std::array<double, 3> norm_mean = {0.5, 0.5, 0.5};
  std::array<double, 3> norm_std = {0.25, 0.25, 0.25};
  bool normalize_output = true;  // center the feature map and scale it to unit L2 norm
};

/// Convolutional feature extractor. "tiny" is a stack of 3x3 conv + ReLU
/// blocks, optionally followed by MapNormalize; "resnet50" is the standard stem plus [3, 4, 6, 3] bottleneck
/// stages (stride 32, 2048 channels) with frozen-statistics normalization.
class Backbone {
 public:
  Backbone(const BackboneConfig& config, std::mt19937_64& rng);

  /// Standardizes `image` ([3, S, S], values in [0, 1]) and runs the stack.
  FeatureMap forward(const Tensor& image, LayerCache* cache) const;
  /// Backpropagates d(loss)/d(features); returns d(loss)/d(image).
  Tensor backward(const Tensor& d_features, const LayerCache& cache);

  void collect_params(std::vector<Param*>& out) { layers_.collect_params(out); }

  int stride() const { return stride_; }
  int out_channels() const { return out_channels_; }
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Sequential layers_;
  int stride_ = 1;
  int out_channels_ = 0;
};

std::vector<FeatureMap> extract_features(const Backbone& backbone, const std::vector<Tensor>& images);

/// Bilinear up-sampling of the spatial grid by an integer factor; the stride
/// shrinks by the same factor.
FeatureMap upsample_features(const FeatureMap& features, int factor);

}  // namespace ccg

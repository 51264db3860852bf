#include "ccg/backbone.hpp"

#include "ccg/image.hpp"

namespace ccg {

Backbone::Backbone(const BackboneConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.kind == "tiny") {
    if (config.tiny_channels.empty() || config.tiny_channels.size() != config.tiny_strides.size()) {
      fail("tiny backbone: channel and stride lists must be non-empty and of equal length");
    }
    int in = 3;
    for (std::size_t i = 0; i < config.tiny_channels.size(); ++i) {
      const int s = config.tiny_strides[i];
      if (s < 1) fail("tiny backbone: stride must be >= 1");
      layers_.add(std::make_unique<Conv2d>("backbone." + std::to_string(i), in, config.tiny_channels[i], 3, s, 1,
                                           true, rng));
      layers_.add(std::make_unique<ReLU>());
      in = config.tiny_channels[i];
      stride_ *= s;
    }
    out_channels_ = in;
  } else if (config.kind == "resnet50") {
    layers_.add(std::make_unique<Conv2d>("backbone.conv1", 3, 64, 7, 2, 3, false, rng));
    layers_.add(std::make_unique<ChannelAffine>("backbone.bn1", 64));
    layers_.add(std::make_unique<ReLU>());
    layers_.add(std::make_unique<MaxPool2d>(3, 2, 1));
    const int blocks[4] = {3, 4, 6, 3};
    const int widths[4] = {64, 128, 256, 512};
    int in = 64;
    for (int stage = 0; stage < 4; ++stage) {
      for (int b = 0; b < blocks[stage]; ++b) {
        const int s = (b == 0 && stage > 0) ? 2 : 1;
        const std::string name = "backbone.layer" + std::to_string(stage + 1) + "." + std::to_string(b);
        layers_.add(std::make_unique<Bottleneck>(name, in, widths[stage], s, rng));
        in = widths[stage] * Bottleneck::kExpansion;
      }
    }
    stride_ = 32;
    out_channels_ = in;
  } else {
    fail("unknown backbone kind '", config.kind, "' (expected tiny or resnet50)");
  }
  if (config.normalize_output) layers_.add(std::make_unique<MapNormalize>());
  if (config.input_size % stride_ != 0) {
    fail("input size ", config.input_size, " is not a multiple of the backbone stride ", stride_);
  }
}

FeatureMap Backbone::forward(const Tensor& image, LayerCache* cache) const {
  if (image.rank() != 3 || image.dim(0) != 3) fail("backbone: expected [3,H,W], got ", shape_string(image.shape));
  if (image.dim(1) != image.dim(2)) fail("backbone: input must be square, got ", shape_string(image.shape));
  if (image.dim(1) != config_.input_size) {
    fail("backbone: input size ", image.dim(1), " does not match configured ", config_.input_size);
  }
  Tensor x = image;
  const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      x.data[c * plane + i] = (x.data[c * plane + i] - config_.norm_mean[c]) / config_.norm_std[c];
    }
  }
  return {layers_.forward(x, cache), stride_};
}

Tensor Backbone::backward(const Tensor& d_features, const LayerCache& cache) {
  Tensor d = layers_.backward(d_features, cache);
  const std::size_t plane = static_cast<std::size_t>(d.dim(1)) * d.dim(2);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) d.data[c * plane + i] /= config_.norm_std[c];
  }
  return d;
}

std::vector<FeatureMap> extract_features(const Backbone& backbone, const std::vector<Tensor>& images) {
  std::vector<FeatureMap> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(backbone.forward(img, nullptr));
  return out;
}

FeatureMap upsample_features(const FeatureMap& features, int factor) {
  if (factor < 1) fail("upsample factor must be >= 1, got ", factor);
  if (factor == 1) return features;
  if (features.stride % factor != 0) {
    fail("upsample factor ", factor, " does not divide the feature stride ", features.stride);
  }
  return {resize_bilinear(features.values, features.height() * factor, features.width() * factor),
          features.stride / factor};
}

}  // namespace ccg

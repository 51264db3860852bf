#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ccg/tensor.hpp"

namespace ccg {

/// Values a layer keeps from forward() for its backward().
struct LayerCache {
  Tensor input;
  std::vector<int> index;
  double scalar = 0;
  std::vector<LayerCache> children;
};

/// A differentiable map over single [C, H, W] tensors. backward() adds
/// parameter gradients into the layer's Params and returns d(loss)/d(input).
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, LayerCache* cache) const = 0;
  virtual Tensor backward(const Tensor& dy, const LayerCache& cache) = 0;
  virtual void collect_params(std::vector<Param*>& out) { (void)out; }
};

class Conv2d final : public Layer {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int padding,
         bool bias, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, LayerCache* cache) const override;
  Tensor backward(const Tensor& dy, const LayerCache& cache) override;
  void collect_params(std::vector<Param*>& out) override;

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  Param weight_;  // [out, in, k, k]
  Param bias_;    // [out]
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, LayerCache* cache) const override;
  Tensor backward(const Tensor& dy, const LayerCache& cache) override;
};

/// Centers the whole [C, H, W] map and scales it to unit L2 norm.
class MapNormalize final : public Layer {
 public:
  static constexpr double kEps = 1e-12;
  Tensor forward(const Tensor& x, LayerCache* cache) const override;
  Tensor backward(const Tensor& dy, const LayerCache& cache) override;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding) : kernel_(kernel), stride_(stride), padding_(padding) {}
  Tensor forward(const Tensor& x, LayerCache* cache) const override;
  Tensor backward(const Tensor& dy, const LayerCache& cache) override;

 private:
  int kernel_, stride_, padding_;
};

/// Per-channel scale and shift; stands in for batch normalization with
/// frozen statistics.
class ChannelAffine final : public Layer {
 public:
  ChannelAffine(const std::string& name, int channels);
  Tensor forward(const Tensor& x, LayerCache* cache) const override;
  Tensor backward(const Tensor& dy, const LayerCache& cache) override;
  void collect_params(std::vector<Param*>& out) override;

 private:
  Param scale_;
  Param shift_;
};

class Sequential final : public Layer {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }

  Tensor forward(const Tensor& x, LayerCache* cache) const override;
  Tensor backward(const Tensor& dy, const LayerCache& cache) override;
  void collect_params(std::vector<Param*>& out) override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// ResNet bottleneck: 1x1 reduce, 3x3 (strided), 1x1 expand, identity or
/// projection shortcut, final ReLU.
class Bottleneck final : public Layer {
 public:
  Bottleneck(const std::string& name, int in_channels, int width, int stride, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, LayerCache* cache) const override;
  Tensor backward(const Tensor& dy, const LayerCache& cache) override;
  void collect_params(std::vector<Param*>& out) override;

  static constexpr int kExpansion = 4;

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;
  ReLU relu_;
};

/// Output spatial size of a conv/pool window sweep.
inline int conv_out_size(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace ccg

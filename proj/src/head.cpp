#include "ccg/head.hpp"

namespace ccg {

ClassHead::ClassHead(int in_channels, int hidden, int num_classes, std::mt19937_64& rng, double input_gain)
    : in_channels_(in_channels), num_classes_(num_classes), input_gain_(input_gain) {
  if (!(input_gain > 0)) fail("class head: input gain must be positive");
  if (hidden <= 0 || num_classes <= 0) fail("class head: hidden width and class count must be positive");
  layers_.add(std::make_unique<Conv2d>("head.fc1", in_channels, hidden, 1, 1, 0, true, rng));
  layers_.add(std::make_unique<ReLU>());
  layers_.add(std::make_unique<Conv2d>("head.fc2", hidden, num_classes, 1, 1, 0, true, rng));
}

ClassProbMap ClassHead::forward(const FeatureMap& features, HeadCache* cache) const {
  if (features.channels() != in_channels_) {
    fail("class head: expected ", in_channels_, " feature channels, got ", features.channels());
  }
  Tensor x = features.values;
  if (input_gain_ != 1.0) {
    for (double& v : x.data) v *= input_gain_;
  }
  Tensor logits = layers_.forward(x, cache ? &cache->layers : nullptr);
  Tensor probs = logits;
  for (double& v : probs.data) v = clamped_sigmoid(v);
  if (cache) {
    cache->logits = std::move(logits);
    cache->probs = probs;
  }
  return {std::move(probs)};
}

Tensor ClassHead::backward(const Tensor& d_probs, const HeadCache& cache) {
  require_same_shape(d_probs, cache.probs, "class head backward");
  Tensor d_logits(d_probs.shape);
  for (std::size_t i = 0; i < d_probs.size(); ++i) {
    const double z = cache.logits.data[i];
    if (z < -kLogitClamp || z > kLogitClamp) continue;  // clamp blocks the gradient
    const double p = cache.probs.data[i];
    d_logits.data[i] = d_probs.data[i] * p * (1.0 - p);
  }
  Tensor dx = layers_.backward(d_logits, cache.layers);
  if (input_gain_ != 1.0) {
    for (double& v : dx.data) v *= input_gain_;
  }
  return dx;
}

}  // namespace ccg

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ccg/backbone.hpp"
#include "ccg/data.hpp"

namespace ccg {

/// Per-class grid of lesion probabilities, [C, H, W], entries in (0, 1).
struct ClassProbMap {
  Tensor probs;

  int num_classes() const { return probs.dim(0); }
  GridSize grid() const { return {probs.dim(1), probs.dim(2)}; }
};

inline constexpr double kLogitClamp = 15.0;

inline double clamped_sigmoid(double logit) {
  const double z = std::clamp(logit, -kLogitClamp, kLogitClamp);
  return 1.0 / (1.0 + std::exp(-z));
}

struct HeadCache {
  LayerCache layers;
  Tensor logits;  // before clamping
  Tensor probs;
};

/// Two 1x1 convolutions (ReLU between) followed by a clamped sigmoid.
class ClassHead {
 public:
  /// `input_gain` is a fixed factor applied to the features before fc1.
  ClassHead(int in_channels, int hidden, int num_classes, std::mt19937_64& rng, double input_gain = 1.0);

  ClassProbMap forward(const FeatureMap& features, HeadCache* cache) const;
  /// d(loss)/d(probs) -> d(loss)/d(features); accumulates weight gradients.
  Tensor backward(const Tensor& d_probs, const HeadCache& cache);

  void collect_params(std::vector<Param*>& out) { layers_.collect_params(out); }

  int in_channels() const { return in_channels_; }
  int num_classes() const { return num_classes_; }

 private:
  int in_channels_;
  int num_classes_;
  double input_gain_;
  Sequential layers_;
};

}  // namespace ccg

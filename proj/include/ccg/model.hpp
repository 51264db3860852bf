#pragma once

#include <memory>
#include <random>
#include <vector>

#include "ccg/backbone.hpp"
#include "ccg/config.hpp"
#include "ccg/data.hpp"
#include "ccg/head.hpp"
#include "ccg/losses.hpp"
#include "ccg/reasoning.hpp"
#include "ccg/relation.hpp"
#include "ccg/structure.hpp"

namespace ccg {

/// One mini-batch: samples plus their precomputed SLIC patch summaries.
struct Batch {
  std::vector<const ImageSample*> samples;
  std::vector<const PatchSummary*> patches;

  std::size_t size() const { return samples.size(); }
};

/// Backbone, class head, inter-image graph G, the patch-graph aggregator
/// W_l and the knowledge-reasoning parameters (W_P, W'_l).
class Model {
 public:
  explicit Model(const TrainConfig& config);

  /// Forward pass over a batch; with `accumulate_grads` the weighted loss is
  /// backpropagated into every parameter's grad (grads are not zeroed here).
  /// Disabled losses are not evaluated and report 0.
  LossReport step(const Batch& batch, const LossWeights& weights, bool accumulate_grads);

  /// Class probability map for one preprocessed image. Features are
  /// up-sampled by `upsample_factor` before the head.
  ClassProbMap predict(const Tensor& image, int upsample_factor = 1) const;

  std::vector<Param*> params();
  void zero_grad();

  GridSize train_grid() const;
  const TrainConfig& config() const { return config_; }

  Backbone& backbone() { return backbone_; }
  ClassHead& head() { return head_; }
  RelationGraph& relation_graph() { return relation_graph_; }
  PatchGraphAggregator& patch_aggregator() { return patch_aggregator_; }
  KnowledgeReasoning& reasoning() { return reasoning_; }

 private:
  TrainConfig config_;
  std::mt19937_64 init_rng_;
  Backbone backbone_;
  ClassHead head_;
  RelationGraph relation_graph_;
  PatchGraphAggregator patch_aggregator_;
  KnowledgeReasoning reasoning_;
};

}  // namespace ccg

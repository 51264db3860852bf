#pragma once

#include <vector>

#include "ccg/data.hpp"
#include "ccg/backbone.hpp"
#include "ccg/structure.hpp"

namespace ccg {

/// Bilinear similarity between every cell of F_u and every cell of F_v:
/// values[a][b] = f_u(a)^T W f_v(b), shape [HW, HW].
struct AffinityMatrix {
  Tensor values;
};

AffinityMatrix affinity(const Tensor& features_u, const Tensor& features_v, const Tensor& weight);

/// Softmax over each column of a matrix (columns sum to 1).
Tensor column_softmax(const Tensor& m);

struct AttendedPair {
  Tensor features_u;  // F_u softmax(P), same shape as F_u
  Tensor features_v;  // F_v softmax(P^T)
  Tensor attention_u; // softmax(P) by columns, [HW, HW]
  Tensor attention_v; // softmax(P^T) by columns
};

AttendedPair attend(const Tensor& features_u, const Tensor& features_v, const AffinityMatrix& p);

/// Grid layout used to cut an H x W map into `blocks` equal rectangles:
/// rows x cols with rows the largest divisor of `blocks` not above its root.
GridSize block_layout(int blocks, int height, int width);

/// Median-binarized codes of the average-pooled feature in each block, as
/// packed 64-bit words (bit i of the code is word i/64, bit i%64).
std::vector<std::vector<std::uint64_t>> block_codes(const Tensor& features, int blocks);

/// values[l][p] = Hamming distance between block l of F'_u and block p of F'_v.
PatchGraph enhanced_patch_graph(const Tensor& enhanced_u, const Tensor& enhanced_v, int blocks);

/// Cross-image attention, enhanced patch graphs and their loss. Owns the
/// affinity weight W_P (identity at start) and the aggregator W'_l (zero at
/// start). Every ordered pair (u, v), u != v, adds a distance term; the
/// self-pair graph of each image only enters the softmax of its row.
class KnowledgeReasoning {
 public:
  KnowledgeReasoning(int channels, int blocks);

  struct Grad {
    std::vector<Tensor> d_features;
  };
  using PairGraphs = std::vector<std::vector<PatchGraph>>;

  /// Loss over the batch. Gradients (when `grad` is given) accumulate into
  /// W_P and W'_l and are returned for the features. Enhanced patch graphs
  /// carry no gradient; pass `frozen` to reuse graphs computed earlier and
  /// `graphs_out` to receive the ones computed here.
  double loss(const std::vector<FeatureMap>& features, Grad* grad, const PairGraphs* frozen = nullptr,
              PairGraphs* graphs_out = nullptr);

  Param& affinity_weight() { return affinity_weight_; }
  PatchGraphAggregator& aggregator() { return aggregator_; }
  void collect_params(std::vector<Param*>& out) {
    out.push_back(&affinity_weight_);
    aggregator_.collect_params(out);
  }

 private:
  int channels_;
  int blocks_;
  Param affinity_weight_;  // [c, c]
  PatchGraphAggregator aggregator_;
};

}  // namespace ccg

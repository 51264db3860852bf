#pragma once

#include <vector>

#include "ccg/backbone.hpp"

namespace ccg {

/// Learnable n x n similarity weights between batch positions. Raw weights
/// are unconstrained; they are row-softmax normalized wherever they are used.
struct RelationGraph {
  Param weights;  // [n, n]

  int n() const { return weights.value.dim(0); }
};

RelationGraph init_relation_graph(int n);

/// Euclidean norm of the element-wise difference of two equally shaped tensors.
double feature_distance(const Tensor& u, const Tensor& v);
inline double feature_distance(const FeatureMap& u, const FeatureMap& v) {
  return feature_distance(u.values, v.values);
}

/// Row-wise softmax of a square matrix. With `skip_diagonal` the diagonal is
/// left at zero and excluded from each row's normalization.
Tensor row_softmax(const Tensor& raw, bool skip_diagonal = false);

/// sum_{u,v} softmax_row(raw)(u,v) * dist(u,v) / n^2 for precomputed
/// distances. Optional outputs receive d/d(raw) and d/d(dist).
double weighted_distance_sum(const Tensor& raw, const Tensor& dist, bool skip_diagonal, Tensor* d_raw,
                             Tensor* d_dist);

/// Gradients of a contrast-constrained loss.
struct ContrastGrad {
  Tensor d_weights;                // d/d(raw weights), [n, n]
  std::vector<Tensor> d_features;  // one per batch position
};

/// sum_{u,v} softmax_row(raw)(u,v) * ||F_u - F_v|| / n^2.
/// With `skip_diagonal` only pairs u != v take part.
double contrast_loss(const Tensor& raw_weights, const std::vector<const Tensor*>& features, bool skip_diagonal,
                     ContrastGrad* grad);

/// Inter-image relation loss over a batch of backbone features.
double inter_image_loss(const RelationGraph& graph, const std::vector<FeatureMap>& features,
                        ContrastGrad* grad = nullptr);

}  // namespace ccg

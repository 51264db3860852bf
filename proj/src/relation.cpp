#include "ccg/relation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ccg {

RelationGraph init_relation_graph(int n) {
  if (n <= 0) fail("relation graph size must be positive, got ", n);
  return {Param("graph.inter", Tensor({n, n}, 1.0 / n), false)};
}

double feature_distance(const Tensor& u, const Tensor& v) {
  require_same_shape(u, v, "feature_distance");
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u.data[i] - v.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Tensor row_softmax(const Tensor& raw, bool skip_diagonal) {
  if (raw.rank() != 2 || raw.dim(0) != raw.dim(1)) fail("row_softmax: expected square matrix, got ", shape_string(raw.shape));
  const int n = raw.dim(0);
  Tensor out(raw.shape);
  for (int u = 0; u < n; ++u) {
    double peak = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < n; ++v) {
      if (skip_diagonal && u == v) continue;
      peak = std::max(peak, raw.data[u * n + v]);
    }
    double z = 0;
    for (int v = 0; v < n; ++v) {
      if (skip_diagonal && u == v) continue;
      z += out.data[u * n + v] = std::exp(raw.data[u * n + v] - peak);
    }
    for (int v = 0; v < n; ++v) {
      if (!(skip_diagonal && u == v)) out.data[u * n + v] /= z;
    }
  }
  return out;
}

double weighted_distance_sum(const Tensor& raw, const Tensor& dist, bool skip_diagonal, Tensor* d_raw,
                             Tensor* d_dist) {
  require_same_shape(raw, dist, "weighted_distance_sum");
  const int n = raw.dim(0);
  const Tensor weights = row_softmax(raw, skip_diagonal);
  const double norm = static_cast<double>(n) * n;

  double loss = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) loss += weights.data[i] * dist.data[i];
  loss /= norm;

  if (d_dist) {
    *d_dist = weights;
    for (double& v : d_dist->data) v /= norm;
  }
  if (d_raw) {
    // d/d(normalized weights) = dist / n^2, then back through each row's softmax
    *d_raw = Tensor({n, n});
    for (int u = 0; u < n; ++u) {
      double dot = 0;
      for (int v = 0; v < n; ++v) dot += weights.data[u * n + v] * dist.data[u * n + v] / norm;
      for (int v = 0; v < n; ++v) {
        if (skip_diagonal && u == v) continue;
        d_raw->data[u * n + v] = weights.data[u * n + v] * (dist.data[u * n + v] / norm - dot);
      }
    }
  }
  return loss;
}

double contrast_loss(const Tensor& raw_weights, const std::vector<const Tensor*>& features, bool skip_diagonal,
                     ContrastGrad* grad) {
  const int n = static_cast<int>(features.size());
  if (raw_weights.shape != Shape{n, n}) {
    fail("contrast loss: weights ", shape_string(raw_weights.shape), " do not match batch of ", n);
  }
  Tensor dist({n, n});
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      dist.data[u * n + v] = dist.data[v * n + u] = feature_distance(*features[u], *features[v]);
    }
  }
  if (!grad) return weighted_distance_sum(raw_weights, dist, skip_diagonal, nullptr, nullptr);

  Tensor d_dist;
  const double loss = weighted_distance_sum(raw_weights, dist, skip_diagonal, &grad->d_weights, &d_dist);
  grad->d_features.assign(static_cast<std::size_t>(n), Tensor{});
  for (int u = 0; u < n; ++u) grad->d_features[u] = Tensor(features[u]->shape);
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      const double d = dist.data[u * n + v];
      if (u == v || d == 0.0) continue;  // the norm's subgradient at zero is taken as 0
      const double coef = d_dist.data[u * n + v] / d;
      const Tensor& fu = *features[u];
      const Tensor& fv = *features[v];
      Tensor& gu = grad->d_features[u];
      Tensor& gv = grad->d_features[v];
      for (std::size_t i = 0; i < fu.size(); ++i) {
        const double diff = coef * (fu.data[i] - fv.data[i]);
        gu.data[i] += diff;
        gv.data[i] -= diff;
      }
    }
  }
  return loss;
}

double inter_image_loss(const RelationGraph& graph, const std::vector<FeatureMap>& features, ContrastGrad* grad) {
  std::vector<const Tensor*> f;
  f.reserve(features.size());
  for (const auto& fm : features) f.push_back(&fm.values);
  return contrast_loss(graph.weights.value, f, false, grad);
}

}  // namespace ccg

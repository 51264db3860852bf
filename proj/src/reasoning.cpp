#include "ccg/reasoning.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace ccg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapMat = Eigen::Map<RowMat>;

ConstMapMat as_matrix(const Tensor& features) {
  return {features.data.data(), features.dim(0), static_cast<Eigen::Index>(features.dim(1)) * features.dim(2)};
}

// Backward of a column softmax: dP[:, b] = S[:, b] * (dS[:, b] - <S[:, b], dS[:, b]>).
RowMat column_softmax_backward(const RowMat& s, const RowMat& ds) {
  RowMat dp(s.rows(), s.cols());
  for (Eigen::Index b = 0; b < s.cols(); ++b) {
    const double dot = s.col(b).dot(ds.col(b));
    dp.col(b) = s.col(b).array() * (ds.col(b).array() - dot);
  }
  return dp;
}

}  // namespace

AffinityMatrix affinity(const Tensor& features_u, const Tensor& features_v, const Tensor& weight) {
  if (features_u.rank() != 3 || features_v.rank() != 3) fail("affinity: features must be [c,h,w]");
  const int c = features_u.dim(0);
  if (features_v.dim(0) != c) fail("affinity: channel mismatch ", c, " vs ", features_v.dim(0));
  if (weight.shape != Shape{c, c}) fail("affinity: weight ", shape_string(weight.shape), " does not match ", c, " channels");
  const ConstMapMat fu = as_matrix(features_u);
  const ConstMapMat fv = as_matrix(features_v);
  const ConstMapMat w(weight.data.data(), c, c);
  AffinityMatrix p{Tensor({static_cast<int>(fu.cols()), static_cast<int>(fv.cols())})};
  MapMat(p.values.data.data(), fu.cols(), fv.cols()).noalias() = fu.transpose() * (w * fv);
  return p;
}

Tensor column_softmax(const Tensor& m) {
  if (m.rank() != 2) fail("column_softmax: expected a matrix");
  const int rows = m.dim(0), cols = m.dim(1);
  Tensor out(m.shape);
  for (int b = 0; b < cols; ++b) {
    double peak = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < rows; ++a) peak = std::max(peak, m.data[static_cast<std::size_t>(a) * cols + b]);
    double z = 0;
    for (int a = 0; a < rows; ++a) {
      const std::size_t i = static_cast<std::size_t>(a) * cols + b;
      z += out.data[i] = std::exp(m.data[i] - peak);
    }
    for (int a = 0; a < rows; ++a) out.data[static_cast<std::size_t>(a) * cols + b] /= z;
  }
  return out;
}

AttendedPair attend(const Tensor& features_u, const Tensor& features_v, const AffinityMatrix& p) {
  const int hw_u = features_u.dim(1) * features_u.dim(2);
  const int hw_v = features_v.dim(1) * features_v.dim(2);
  if (p.values.shape != Shape{hw_u, hw_v}) fail("attend: affinity shape does not match the feature maps");
  if (hw_u != hw_v) fail("attend: feature maps must have the same number of cells");

  AttendedPair out;
  out.attention_u = column_softmax(p.values);
  Tensor pt({hw_v, hw_u});
  for (int a = 0; a < hw_u; ++a) {
    for (int b = 0; b < hw_v; ++b) pt.data[static_cast<std::size_t>(b) * hw_u + a] = p.values.data[static_cast<std::size_t>(a) * hw_v + b];
  }
  out.attention_v = column_softmax(pt);

  out.features_u = Tensor(features_u.shape);
  out.features_v = Tensor(features_v.shape);
  MapMat(out.features_u.data.data(), features_u.dim(0), hw_u).noalias() =
      as_matrix(features_u) * ConstMapMat(out.attention_u.data.data(), hw_u, hw_v);
  MapMat(out.features_v.data.data(), features_v.dim(0), hw_v).noalias() =
      as_matrix(features_v) * ConstMapMat(out.attention_v.data.data(), hw_v, hw_u);
  return out;
}

GridSize block_layout(int blocks, int height, int width) {
  if (blocks < 1) fail("block count must be >= 1");
  int rows = 1;
  for (int r = 1; r * r <= blocks; ++r) {
    if (blocks % r == 0) rows = r;
  }
  const int cols = blocks / rows;
  if (height % rows != 0 || width % cols != 0) {
    fail(blocks, " blocks (", rows, "x", cols, ") do not tile a ", height, "x", width, " grid");
  }
  return {rows, cols};
}

std::vector<std::vector<std::uint64_t>> block_codes(const Tensor& features, int blocks) {
  if (features.rank() != 3) fail("block_codes: features must be [c,h,w]");
  const int c = features.dim(0), h = features.dim(1), w = features.dim(2);
  const GridSize layout = block_layout(blocks, h, w);
  const int bh = h / layout.h, bw = w / layout.w;
  const std::size_t words = (static_cast<std::size_t>(c) + 63) / 64;

  std::vector<std::vector<std::uint64_t>> codes;
  codes.reserve(static_cast<std::size_t>(blocks));
  std::vector<double> pooled(static_cast<std::size_t>(c));
  for (int br = 0; br < layout.h; ++br) {
    for (int bc = 0; bc < layout.w; ++bc) {
      for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int y = br * bh; y < (br + 1) * bh; ++y) {
          for (int x = bc * bw; x < (bc + 1) * bw; ++x) s += features.at(ch, y, x);
        }
        pooled[ch] = s / (bh * bw);
      }
      std::vector<double> sorted = pooled;
      std::sort(sorted.begin(), sorted.end());
      const double median = c % 2 ? sorted[c / 2] : 0.5 * (sorted[c / 2 - 1] + sorted[c / 2]);
      const double tol = 1e-12 * (1.0 + std::abs(median));
      std::vector<std::uint64_t> code(words, 0);
      for (int ch = 0; ch < c; ++ch) {
        if (pooled[ch] - median > tol) code[ch / 64] |= std::uint64_t{1} << (ch % 64);
      }
      codes.push_back(std::move(code));
    }
  }
  return codes;
}

PatchGraph enhanced_patch_graph(const Tensor& enhanced_u, const Tensor& enhanced_v, int blocks) {
  require_same_shape(enhanced_u, enhanced_v, "enhanced_patch_graph");
  const auto cu = block_codes(enhanced_u, blocks);
  const auto cv = block_codes(enhanced_v, blocks);
  PatchGraph g{Tensor({blocks, blocks})};
  for (int l = 0; l < blocks; ++l) {
    for (int p = 0; p < blocks; ++p) {
      int d = 0;
      for (std::size_t k = 0; k < cu[l].size(); ++k) d += std::popcount(cu[l][k] ^ cv[p][k]);
      g.values.data[static_cast<std::size_t>(l) * blocks + p] = d;
    }
  }
  return g;
}

KnowledgeReasoning::KnowledgeReasoning(int channels, int blocks)
    : channels_(channels),
      blocks_(blocks),
      affinity_weight_("reasoning.affinity", Tensor({channels, channels}), false),
      aggregator_("reasoning.graph_fc", blocks, static_cast<double>(channels)) {
  for (int i = 0; i < channels; ++i) affinity_weight_.value.data[static_cast<std::size_t>(i) * channels + i] = 1.0;
}

double KnowledgeReasoning::loss(const std::vector<FeatureMap>& features, Grad* grad, const PairGraphs* frozen,
                                PairGraphs* graphs_out) {
  const int n = static_cast<int>(features.size());
  for (const auto& f : features) {
    if (f.channels() != channels_) fail("knowledge reasoning: expected ", channels_, " channels, got ", f.channels());
  }
  if (frozen && static_cast<int>(frozen->size()) != n) fail("knowledge reasoning: frozen graph table size mismatch");

  PairGraphs graphs(static_cast<std::size_t>(n), std::vector<PatchGraph>(static_cast<std::size_t>(n)));
  std::vector<std::vector<AttendedPair>> attended(static_cast<std::size_t>(n), std::vector<AttendedPair>(static_cast<std::size_t>(n)));
  Tensor dist({n, n});
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      const AffinityMatrix p = affinity(features[u].values, features[v].values, affinity_weight_.value);
      AttendedPair a = attend(features[u].values, features[v].values, p);
      graphs[u][v] = frozen ? (*frozen)[u][v] : enhanced_patch_graph(a.features_u, a.features_v, blocks_);
      // self pairs only take part in the row normalization
      if (u == v) continue;
      dist.data[u * n + v] = feature_distance(a.features_u, a.features_v);
      attended[u][v] = std::move(a);
    }
  }
  const Tensor raw = aggregator_.pair_weights(graphs, false);
  if (!grad) {
    if (graphs_out) *graphs_out = std::move(graphs);
    return weighted_distance_sum(raw, dist, false, nullptr, nullptr);
  }

  Tensor d_raw, d_dist;
  const double value = weighted_distance_sum(raw, dist, false, &d_raw, &d_dist);
  aggregator_.backward_pairs(graphs, d_raw, false);

  grad->d_features.assign(static_cast<std::size_t>(n), Tensor{});
  for (int u = 0; u < n; ++u) grad->d_features[u] = Tensor(features[u].values.shape);

  const int c = channels_;
  MapMat d_w(affinity_weight_.grad.data.data(), c, c);
  const ConstMapMat w(affinity_weight_.value.data.data(), c, c);
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      const double d = dist.data[u * n + v];
      if (u == v || d == 0.0) continue;
      const AttendedPair& a = attended[u][v];
      const ConstMapMat fu = as_matrix(features[u].values);
      const ConstMapMat fv = as_matrix(features[v].values);
      const Eigen::Index hw = fu.cols();

      // d/dF'_u and d/dF'_v of alpha * ||F'_u - F'_v||
      const RowMat diff = (as_matrix(a.features_u) - as_matrix(a.features_v)) * (d_dist.data[u * n + v] / d);
      const ConstMapMat su(a.attention_u.data.data(), hw, hw);
      const ConstMapMat sv(a.attention_v.data.data(), hw, hw);

      MapMat gu(grad->d_features[u].data.data(), c, hw);
      MapMat gv(grad->d_features[v].data.data(), c, hw);
      // F'_u = F_u S_u, F'_v = F_v S_v
      gu.noalias() += diff * su.transpose();
      gv.noalias() -= diff * sv.transpose();
      const RowMat d_su = fu.transpose() * diff;
      const RowMat d_sv = -(fv.transpose() * diff);

      // S_u = colsoftmax(P), S_v = colsoftmax(P^T)
      const RowMat d_p = column_softmax_backward(su, d_su) + column_softmax_backward(sv, d_sv).transpose();

      // P = F_u^T W F_v
      gu.noalias() += (w * fv) * d_p.transpose();
      gv.noalias() += (w.transpose() * fu) * d_p;
      d_w.noalias() += fu * d_p * fv.transpose();
    }
  }
  if (graphs_out) *graphs_out = std::move(graphs);
  return value;
}

}  // namespace ccg

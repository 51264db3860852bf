#include "ccg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace ccg {
namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

}  // namespace

double bce_grid_loss(const Tensor& probs, const Tensor& labels, Tensor* grad) {
  require_same_shape(probs, labels, "bce_grid_loss");
  if (grad) *grad = Tensor(probs.shape);
  double loss = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double p = clamp_prob(probs.data[j]);
    const double y = labels.data[j];
    loss += -y * std::log(p) - (1.0 - y) * std::log1p(-p);
    if (grad) grad->data[j] = -y / p + (1.0 - y) / (1.0 - p);
  }
  return loss;
}

double mil_image_loss(const Tensor& probs, int y, Tensor* grad) {
  if (probs.size() == 0) fail("mil_image_loss: empty grid");
  if (y != 0 && y != 1) fail("mil_image_loss: label must be 0 or 1, got ", y);
  // log of prod(1 - p)
  double log_q = 0;
  for (double p : probs.data) log_q += std::log1p(-clamp_prob(p));

  if (grad) *grad = Tensor(probs.shape);
  if (y == 0) {
    if (grad) {
      for (std::size_t j = 0; j < probs.size(); ++j) grad->data[j] = 1.0 / (1.0 - clamp_prob(probs.data[j]));
    }
    return -log_q;
  }
  // 1 - Q computed as -expm1(log Q) to keep precision when Q is near 1
  const double one_minus_q = -std::expm1(log_q);
  if (grad) {
    const double q = std::exp(log_q);
    for (std::size_t j = 0; j < probs.size(); ++j) {
      grad->data[j] = -q / (one_minus_q * (1.0 - clamp_prob(probs.data[j])));
    }
  }
  return -std::log(one_minus_q);
}

Tensor channel(const Tensor& t, int k) {
  if (t.rank() != 3 || k < 0 || k >= t.dim(0)) fail("channel: bad index ", k, " for ", shape_string(t.shape));
  const std::size_t plane = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  Tensor out({t.dim(1), t.dim(2)});
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(k * plane), plane, out.data.begin());
  return out;
}

double base_loss(const std::vector<ClassProbMap>& preds, const std::vector<GridLabelMap>& grid_labels,
                 const std::vector<std::vector<int>>& image_labels, const std::vector<std::vector<int>>& has_box,
                 double beta, std::vector<Tensor>* grads) {
  const std::size_t n = preds.size();
  if (grid_labels.size() != n || image_labels.size() != n || has_box.size() != n) {
    fail("base_loss: batch size mismatch");
  }
  if (!(beta > 0)) fail("base_loss: beta must be positive");
  if (grads) grads->assign(n, Tensor{});

  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& probs = preds[i].probs;
    require_same_shape(probs, grid_labels[i].labels, "base_loss grid labels");
    const int classes = probs.dim(0);
    if (static_cast<int>(image_labels[i].size()) != classes || static_cast<int>(has_box[i].size()) != classes) {
      fail("base_loss: label vectors do not match class count ", classes);
    }
    if (grads) (*grads)[i] = Tensor(probs.shape);
    const std::size_t plane = static_cast<std::size_t>(probs.dim(1)) * probs.dim(2);
    for (int k = 0; k < classes; ++k) {
      const Tensor p = channel(probs, k);
      Tensor g;
      double term;
      double weight;
      if (has_box[i][k] == 1) {
        term = bce_grid_loss(p, channel(grid_labels[i].labels, k), grads ? &g : nullptr);
        weight = beta;
      } else if (has_box[i][k] == 0) {
        term = mil_image_loss(p, image_labels[i][k], grads ? &g : nullptr);
        weight = 1.0;
      } else {
        fail("base_loss: has_box must be 0 or 1");
      }
      total += weight * term;
      if (grads) {
        for (std::size_t j = 0; j < plane; ++j) (*grads)[i].data[k * plane + j] = weight * g.data[j];
      }
    }
  }
  return total;
}

}  // namespace ccg

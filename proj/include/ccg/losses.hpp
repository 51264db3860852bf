#pragma once

#include <vector>

#include "ccg/data.hpp"
#include "ccg/head.hpp"

namespace ccg {

/// The four loss components of one training step and their weighted total.
struct LossReport {
  double l_base = 0;
  double l_ir = 0;
  double l_ik = 0;
  double l_kr = 0;
  double l_all = 0;
};

/// Probabilities are clamped into [kProbEps, 1 - kProbEps] inside the losses.
/// Head outputs never reach the clamp (sigmoid(15) is further from 0 and 1).
inline constexpr double kProbEps = 1e-7;

/// Grid-level binary cross-entropy summed over cells. `probs` and `labels`
/// share any shape. When `grad` is given it receives d(loss)/d(probs).
double bce_grid_loss(const Tensor& probs, const Tensor& labels, Tensor* grad = nullptr);

/// Multiple-instance loss: the image is positive iff some cell is.
/// y = 1: -log(1 - prod(1 - p)); y = 0: -log(prod(1 - p)), in log space.
double mil_image_loss(const Tensor& probs, int y, Tensor* grad = nullptr);

/// Channel k of a [C, H, W] tensor as [H, W].
Tensor channel(const Tensor& t, int k);

/// Sum over samples and classes of beta * BCE where has_box = 1, and MIL
/// where has_box = 0. `grads`, when given, receives one [C, H, W] gradient
/// per sample.
double base_loss(const std::vector<ClassProbMap>& preds, const std::vector<GridLabelMap>& grid_labels,
                 const std::vector<std::vector<int>>& image_labels, const std::vector<std::vector<int>>& has_box,
                 double beta, std::vector<Tensor>* grads = nullptr);

}  // namespace ccg

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccg/data.hpp"
#include "ccg/model.hpp"

namespace ccg {

inline constexpr std::array<double, 4> kIouThresholds = {0.1, 0.3, 0.5, 0.7};

/// mask[i, j] = probs[i, j] > tau for a [H, W] probability slice.
Tensor threshold_grid(const Tensor& probs, double tau = 0.5);

struct IouValue {
  double iou = 0;
  bool both_empty = false;  // no predicted cell and no box pixel; iou is 0
};

/// Pixel-set IoU between the footprint of the positive cells of `mask`
/// ([h, w] over an image of `image_size`) and the pixels touched by `boxes`
/// (a pixel belongs to a box when its unit square overlaps it with positive
/// area). Computed exactly on compressed coordinates.
IouValue iou_discrete(const Tensor& mask, const std::vector<BoxAnnotation>& boxes, GridSize image_size);

/// Pixel footprint [y0, y1) x [x0, x1) of grid cell (i, j).
struct PixelRect {
  int y0 = 0, y1 = 0, x0 = 0, x1 = 0;
};
PixelRect cell_footprint(int i, int j, GridSize grid, GridSize image_size);
PixelRect box_footprint(const BoxAnnotation& box, GridSize image_size);

/// One evaluated (sample, class) pair.
struct LocalizationResult {
  std::string sample_id;
  int class_index = 0;
  Tensor mask;
  IouValue iou;

  bool correct(double t) const { return iou.iou > t; }
};

/// Evaluates every (sample, class) pair with a positive label and at least
/// one ground-truth box of that class.
std::vector<LocalizationResult> localize(const Model& model, const Dataset& dataset, double tau,
                                         int upsample_factor);

struct AccuracyTable {
  std::vector<std::string> classes;
  std::vector<double> thresholds;
  std::vector<int> counts;                              // evaluable pairs per class
  std::vector<std::vector<std::optional<double>>> acc;  // [threshold][class], nullopt = N/A
  std::vector<std::optional<double>> mean;              // [threshold], over classes with data

  std::optional<double> mean_at(double t) const;
};

AccuracyTable accuracy_table(const std::vector<LocalizationResult>& results, const std::vector<std::string>& classes,
                             const std::vector<double>& thresholds = {kIouThresholds.begin(), kIouThresholds.end()});

/// Rows "T,class,accuracy,n", one per (threshold, class) plus a "mean" row
/// per threshold. Accuracies use 6 decimals, N/A for classes without data.
std::string table_csv(const AccuracyTable& table);

/// Aligned table: one row per threshold, one column per class, then the mean.
std::string table_text(const AccuracyTable& table);

/// Grayscale rendering of `image` with positive cells of `mask` tinted red
/// and the outlines of `boxes` drawn in green.
Tensor render_heatmap(const Tensor& image, const Tensor& mask, const std::vector<BoxAnnotation>& boxes);
void export_heatmap(const Tensor& image, const Tensor& mask, const std::vector<BoxAnnotation>& boxes,
                    const std::filesystem::path& out_path);

/// "<stem of sample id>_<class name>.png"
std::string heatmap_file_name(const std::string& sample_id, const std::string& class_name);

}  // namespace ccg

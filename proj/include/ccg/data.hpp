#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccg/tensor.hpp"

namespace ccg {

/// The 14 finding classes of the NIH chest X-ray release, in canonical order.
const std::vector<std::string>& nih_classes();

/// First `num_classes` names of the NIH vocabulary.
std::vector<std::string> class_vocabulary(int num_classes);

/// Axis-aligned box in pixel coordinates of the image it belongs to.
struct BoxAnnotation {
  int class_index = 0;
  double x = 0, y = 0, w = 0, h = 0;

  bool operator==(const BoxAnnotation&) const = default;
};

struct ImageSample {
  std::string id;
  Tensor pixels;                    // [3, S, S], values in [0, 1]
  std::vector<int> image_labels;    // length C, binary
  std::vector<BoxAnnotation> boxes; // ground truth boxes in pixel coordinates of `pixels`
  std::vector<int> has_box;         // length C, 1 when box supervision is used for class k

  int num_classes() const { return static_cast<int>(image_labels.size()); }
  bool operator==(const ImageSample&) const = default;
};

struct Dataset {
  std::vector<std::string> classes;
  int image_size = 0;
  std::vector<ImageSample> samples;
  std::vector<std::string> warnings;  // rows rejected during loading

  int num_classes() const { return static_cast<int>(classes.size()); }
};

struct GridSize {
  int h = 0;
  int w = 0;
  bool operator==(const GridSize&) const = default;
};

struct Cell {
  int i = 0;  // row
  int j = 0;  // column
  auto operator<=>(const Cell&) const = default;
};

/// Per-class binary grid targets, shape [C, H, W].
struct GridLabelMap {
  Tensor labels;
  GridSize grid() const { return {labels.dim(1), labels.dim(2)}; }
};

/// Cells whose pixel footprint intersects `box` with positive area, in
/// row-major order. Cells are image_size / grid_size pixels on a side.
std::vector<Cell> project_box_to_grid(const BoxAnnotation& box, GridSize image_size, GridSize grid);

GridLabelMap make_grid_labels(const ImageSample& sample, GridSize image_size, GridSize grid);

/// Resizes to size x size (bilinear) and clamps to [0, 1]. Idempotent.
Tensor preprocess(const Tensor& raw, int size);

/// Checks the ImageSample invariants; throws Error on violation.
void validate_sample(const ImageSample& sample, int image_size);

struct LoadOptions {
  int image_size = 512;
  int num_classes = 14;
};

/// Reads an NIH-style dataset: `labels_csv` rows are (image id, pipe-separated
/// findings, ...), `bbox_csv` rows are (image id, finding, x, y, w, h, ...),
/// both with a header row. Box coordinates are scaled to the preprocessed size.
Dataset load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& labels_csv,
                     const std::optional<std::filesystem::path>& bbox_csv, const LoadOptions& options);

/// Standard file names used by dataset dumps.
inline constexpr const char* kLabelsCsv = "Data_Entry.csv";
inline constexpr const char* kBoxesCsv = "BBox_List.csv";
inline constexpr const char* kImagesDir = "images";

/// Loads a dump directory written by write_dataset.
Dataset load_dataset_dir(const std::filesystem::path& dir, const LoadOptions& options);

/// Writes PNGs plus the labels and bbox CSVs. Only boxes of classes with
/// has_box = 1 are written, so loading the dump reproduces the supervision.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct SyntheticSpec {
  int image_size = 64;
  int num_classes = 2;
  double fraction_annotated = 0.2;
  double positive_rate = 0.5;
  int min_lesion = 30;  // lesion side length range in pixels
  int max_lesion = 36;
  double noise = 0.03;
};

/// Deterministic synthetic chest-like images: two dark lung fields on a
/// brighter body, with class 0 drawn as bright discs, class 1 as dark
/// striped bars and further classes as bright rings. Every lesion is
/// recorded as a ground-truth box; `fraction_annotated` of the samples
/// expose those boxes as training supervision.
Dataset generate_synthetic_dataset(std::uint64_t seed, int n_images, const SyntheticSpec& spec);

/// A training split as specified and a disjoint held-out split drawn from a
/// separate stream with every box exposed.
struct SyntheticSplits {
  Dataset train;
  Dataset test;
};
SyntheticSplits generate_synthetic_splits(std::uint64_t seed, int n_train, int n_test, const SyntheticSpec& spec);

}  // namespace ccg

#include "ccg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>

#include "ccg/image.hpp"

namespace ccg {
namespace {

constexpr double kOverlayAlpha = 0.45;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "N/A"; }

std::string fmt_threshold(double t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", t);
  return buf;
}

}  // namespace

Tensor threshold_grid(const Tensor& probs, double tau) {
  if (probs.rank() != 2) fail("threshold_grid: expected [H,W], got ", shape_string(probs.shape));
  Tensor mask(probs.shape);
  for (std::size_t i = 0; i < probs.size(); ++i) mask.data[i] = probs.data[i] > tau ? 1.0 : 0.0;
  return mask;
}

PixelRect cell_footprint(int i, int j, GridSize grid, GridSize image_size) {
  auto edge = [](int k, int cells, int pixels) {
    return static_cast<int>(static_cast<std::int64_t>(k) * pixels / cells);
  };
  return {edge(i, grid.h, image_size.h), edge(i + 1, grid.h, image_size.h), edge(j, grid.w, image_size.w),
          edge(j + 1, grid.w, image_size.w)};
}

PixelRect box_footprint(const BoxAnnotation& box, GridSize image_size) {
  PixelRect r;
  r.y0 = std::clamp(static_cast<int>(std::floor(box.y)), 0, image_size.h);
  r.y1 = std::clamp(static_cast<int>(std::ceil(box.y + box.h)), 0, image_size.h);
  r.x0 = std::clamp(static_cast<int>(std::floor(box.x)), 0, image_size.w);
  r.x1 = std::clamp(static_cast<int>(std::ceil(box.x + box.w)), 0, image_size.w);
  return r;
}

IouValue iou_discrete(const Tensor& mask, const std::vector<BoxAnnotation>& boxes, GridSize image_size) {
  if (mask.rank() != 2) fail("iou_discrete: mask must be [h,w]");
  const GridSize grid{mask.dim(0), mask.dim(1)};
  std::vector<PixelRect> pred, gt;
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) {
      if (mask.data[static_cast<std::size_t>(i) * grid.w + j] > 0.5) pred.push_back(cell_footprint(i, j, grid, image_size));
    }
  }
  for (const auto& b : boxes) gt.push_back(box_footprint(b, image_size));

  std::vector<int> ys{0, image_size.h}, xs{0, image_size.w};
  for (const auto* set : {&pred, &gt}) {
    for (const auto& r : *set) {
      ys.insert(ys.end(), {r.y0, r.y1});
      xs.insert(xs.end(), {r.x0, r.x1});
    }
  }
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  auto covers = [](const std::vector<PixelRect>& rs, int y, int x) {
    return std::any_of(rs.begin(), rs.end(), [&](const PixelRect& r) { return r.y0 <= y && y < r.y1 && r.x0 <= x && x < r.x1; });
  };
  std::int64_t inter = 0, uni = 0;
  for (std::size_t a = 0; a + 1 < ys.size(); ++a) {
    for (std::size_t b = 0; b + 1 < xs.size(); ++b) {
      const bool p = covers(pred, ys[a], xs[b]);
      const bool g = covers(gt, ys[a], xs[b]);
      const std::int64_t area = static_cast<std::int64_t>(ys[a + 1] - ys[a]) * (xs[b + 1] - xs[b]);
      if (p && g) inter += area;
      if (p || g) uni += area;
    }
  }
  if (uni == 0) return {0.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

std::vector<LocalizationResult> localize(const Model& model, const Dataset& dataset, double tau, int upsample_factor) {
  std::vector<LocalizationResult> out;
  const GridSize image_size{dataset.image_size, dataset.image_size};
  for (const auto& s : dataset.samples) {
    std::vector<int> classes;
    for (int k = 0; k < s.num_classes(); ++k) {
      const bool boxed = std::any_of(s.boxes.begin(), s.boxes.end(), [k](const BoxAnnotation& b) { return b.class_index == k; });
      if (s.image_labels[k] && boxed) classes.push_back(k);
    }
    if (classes.empty()) continue;
    const ClassProbMap probs = model.predict(s.pixels, upsample_factor);
    for (int k : classes) {
      std::vector<BoxAnnotation> boxes;
      std::copy_if(s.boxes.begin(), s.boxes.end(), std::back_inserter(boxes),
                   [k](const BoxAnnotation& b) { return b.class_index == k; });
      LocalizationResult r;
      r.sample_id = s.id;
      r.class_index = k;
      r.mask = threshold_grid(channel(probs.probs, k), tau);
      r.iou = iou_discrete(r.mask, boxes, image_size);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::optional<double> AccuracyTable::mean_at(double t) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - t) < 1e-12) return mean[i];
  }
  fail("accuracy table has no threshold ", t);
}

AccuracyTable accuracy_table(const std::vector<LocalizationResult>& results, const std::vector<std::string>& classes,
                             const std::vector<double>& thresholds) {
  AccuracyTable table;
  table.classes = classes;
  table.thresholds = thresholds;
  const std::size_t c = classes.size();
  table.counts.assign(c, 0);
  std::vector<std::vector<int>> hits(thresholds.size(), std::vector<int>(c, 0));
  for (const auto& r : results) {
    if (r.class_index < 0 || static_cast<std::size_t>(r.class_index) >= c) fail("result class ", r.class_index, " out of range");
    ++table.counts[r.class_index];
    for (std::size_t t = 0; t < thresholds.size(); ++t) hits[t][r.class_index] += r.correct(thresholds[t]);
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::vector<std::optional<double>> row(c);
    double sum = 0;
    int used = 0;
    for (std::size_t k = 0; k < c; ++k) {
      if (table.counts[k] == 0) continue;
      row[k] = static_cast<double>(hits[t][k]) / table.counts[k];
      sum += *row[k];
      ++used;
    }
    table.acc.push_back(std::move(row));
    table.mean.push_back(used ? std::optional<double>(sum / used) : std::nullopt);
  }
  return table;
}

std::string table_csv(const AccuracyTable& table) {
  std::ostringstream os;
  os << "T,class,accuracy,n\n";
  int total = 0;
  for (int n : table.counts) total += n;
  for (std::size_t t = 0; t < table.thresholds.size(); ++t) {
    const std::string th = fmt_threshold(table.thresholds[t]);
    for (std::size_t k = 0; k < table.classes.size(); ++k) {
      os << th << ',' << table.classes[k] << ',' << fmt(table.acc[t][k]) << ',' << table.counts[k] << '\n';
    }
    os << th << ",mean," << fmt(table.mean[t]) << ',' << total << '\n';
  }
  return os.str();
}

std::string table_text(const AccuracyTable& table) {
  std::vector<std::string> header{"T(IoU)"};
  header.insert(header.end(), table.classes.begin(), table.classes.end());
  header.push_back("Mean");
  std::vector<std::vector<std::string>> rows{header};
  for (std::size_t t = 0; t < table.thresholds.size(); ++t) {
    std::vector<std::string> row{fmt_threshold(table.thresholds[t])};
    for (const auto& a : table.acc[t]) row.push_back(fmt(a));
    row.push_back(fmt(table.mean[t]));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << "  ";
      os << row[i] << std::string(width[i] - row[i].size(), ' ');
    }
    os << '\n';
  }
  return os.str();
}

Tensor render_heatmap(const Tensor& image, const Tensor& mask, const std::vector<BoxAnnotation>& boxes) {
  const Tensor gray = to_gray(image);
  const int h = gray.dim(0), w = gray.dim(1);
  const GridSize image_size{h, w};
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = gray.data[static_cast<std::size_t>(y) * w + x];
    }
  }
  if (mask.rank() != 2) fail("render_heatmap: mask must be [h,w]");
  const GridSize grid{mask.dim(0), mask.dim(1)};
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) {
      if (mask.data[static_cast<std::size_t>(i) * grid.w + j] <= 0.5) continue;
      const PixelRect r = cell_footprint(i, j, grid, image_size);
      for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
          out.at(0, y, x) = (1 - kOverlayAlpha) * out.at(0, y, x) + kOverlayAlpha;
          out.at(1, y, x) *= 1 - kOverlayAlpha;
          out.at(2, y, x) *= 1 - kOverlayAlpha;
        }
      }
    }
  }
  auto paint = [&](int y, int x) {
    out.at(0, y, x) = 0.0;
    out.at(1, y, x) = 1.0;
    out.at(2, y, x) = 0.0;
  };
  for (const auto& b : boxes) {
    const PixelRect r = box_footprint(b, image_size);
    if (r.y1 <= r.y0 || r.x1 <= r.x0) continue;
    for (int x = r.x0; x < r.x1; ++x) {
      paint(r.y0, x);
      paint(r.y1 - 1, x);
    }
    for (int y = r.y0; y < r.y1; ++y) {
      paint(y, r.x0);
      paint(y, r.x1 - 1);
    }
  }
  return out;
}

void export_heatmap(const Tensor& image, const Tensor& mask, const std::vector<BoxAnnotation>& boxes,
                    const std::filesystem::path& out_path) {
  write_png(out_path, render_heatmap(image, mask, boxes));
}

std::string heatmap_file_name(const std::string& sample_id, const std::string& class_name) {
  std::string name = class_name;
  std::replace(name.begin(), name.end(), ' ', '_');
  return std::filesystem::path(sample_id).stem().string() + "_" + name + ".png";
}

}  // namespace ccg

#include "ccg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "ccg/image.hpp"

namespace ccg {
namespace fs = std::filesystem;

const std::vector<std::string>& nih_classes() {
  static const std::vector<std::string> names = {
      "Atelectasis", "Cardiomegaly", "Effusion",      "Infiltration",       "Mass",
      "Nodule",      "Pneumonia",    "Pneumothorax",  "Consolidation",      "Edema",
      "Emphysema",   "Fibrosis",     "Pleural_Thickening", "Hernia"};
  return names;
}

std::vector<std::string> class_vocabulary(int num_classes) {
  const auto& all = nih_classes();
  if (num_classes < 1 || num_classes > static_cast<int>(all.size())) {
    fail("num_classes must be in [1, ", all.size(), "], got ", num_classes);
  }
  return {all.begin(), all.begin() + num_classes};
}

std::vector<Cell> project_box_to_grid(const BoxAnnotation& box, GridSize image_size, GridSize grid) {
  if (!(box.w > 0) || !(box.h > 0)) fail("degenerate box: w=", box.w, " h=", box.h);
  if (grid.h <= 0 || grid.w <= 0 || image_size.h <= 0 || image_size.w <= 0) {
    fail("project_box_to_grid: bad sizes");
  }
  const double cell_h = static_cast<double>(image_size.h) / grid.h;
  const double cell_w = static_cast<double>(image_size.w) / grid.w;

  // Cell i spans [i*cell, (i+1)*cell); it meets [lo, hi) with positive length
  // iff i*cell < hi and (i+1)*cell > lo.
  auto span = [](double lo, double hi, double cell, int n) {
    int first = static_cast<int>(std::floor(lo / cell));
    int last = static_cast<int>(std::ceil(hi / cell)) - 1;
    return std::pair{std::max(first, 0), std::min(last, n - 1)};
  };
  const auto [i0, i1] = span(box.y, box.y + box.h, cell_h, grid.h);
  const auto [j0, j1] = span(box.x, box.x + box.w, cell_w, grid.w);

  std::vector<Cell> cells;
  for (int i = i0; i <= i1; ++i) {
    for (int j = j0; j <= j1; ++j) cells.push_back({i, j});
  }
  return cells;
}

GridLabelMap make_grid_labels(const ImageSample& sample, GridSize image_size, GridSize grid) {
  GridLabelMap map{Tensor({sample.num_classes(), grid.h, grid.w})};
  for (const auto& box : sample.boxes) {
    for (const Cell& c : project_box_to_grid(box, image_size, grid)) {
      map.labels.at(box.class_index, c.i, c.j) = 1.0;
    }
  }
  return map;
}

Tensor preprocess(const Tensor& raw, int size) {
  if (raw.rank() != 3 || raw.dim(0) != 3) fail("preprocess: expected [3,H,W], got ", shape_string(raw.shape));
  Tensor out = resize_bilinear(raw, size, size);
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void validate_sample(const ImageSample& s, int image_size) {
  if (s.pixels.shape != Shape{3, image_size, image_size}) {
    fail("sample ", s.id, ": pixels shape ", shape_string(s.pixels.shape), " != [3,", image_size, ",",
         image_size, "]");
  }
  const int c = s.num_classes();
  if (static_cast<int>(s.has_box.size()) != c) fail("sample ", s.id, ": has_box length mismatch");
  for (const auto& b : s.boxes) {
    if (b.class_index < 0 || b.class_index >= c) fail("sample ", s.id, ": box class out of range");
    if (!s.image_labels[b.class_index]) fail("sample ", s.id, ": box for a negative class");
    if (!(b.w > 0 && b.h > 0)) fail("sample ", s.id, ": degenerate box");
  }
  for (int k = 0; k < c; ++k) {
    if (s.has_box[k] && std::none_of(s.boxes.begin(), s.boxes.end(),
                                     [k](const BoxAnnotation& b) { return b.class_index == k; })) {
      fail("sample ", s.id, ": has_box set for class ", k, " without a box");
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return fields;
}

std::ifstream open_csv(const fs::path& path) {
  if (!fs::exists(path)) fail("missing file: ", path.string());
  std::ifstream in(path);
  if (!in) fail("cannot open ", path.string());
  return in;
}

int class_index_of(const std::vector<std::string>& vocab, std::string name) {
  if (name == "Infiltrate") name = "Infiltration";  // spelling used by the NIH box list
  const auto it = std::find(vocab.begin(), vocab.end(), name);
  return it == vocab.end() ? -1 : static_cast<int>(it - vocab.begin());
}

double parse_number(const std::string& s, const fs::path& file, int row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(file.string(), " row ", row, ": bad number '", s, "'");
  }
}

}  // namespace

Dataset load_dataset(const fs::path& image_dir, const fs::path& labels_csv, const std::optional<fs::path>& bbox_csv,
                     const LoadOptions& options) {
  if (!fs::is_directory(image_dir)) fail("missing image directory: ", image_dir.string());
  Dataset ds;
  ds.classes = class_vocabulary(options.num_classes);
  ds.image_size = options.image_size;
  const int c = options.num_classes;

  std::map<std::string, std::size_t> index;
  std::vector<std::pair<int, int>> original_size;
  {
    auto in = open_csv(labels_csv);
    std::string line;
    std::getline(in, line);  // header
    int row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() < 2) fail(labels_csv.string(), " row ", row, ": expected at least 2 columns");
      ImageSample s;
      s.id = fields[0];
      s.image_labels.assign(c, 0);
      s.has_box.assign(c, 0);
      std::stringstream findings(fields[1]);
      std::string label;
      while (std::getline(findings, label, '|')) {
        if (label == "No Finding") continue;
        const int k = class_index_of(ds.classes, label);
        if (k < 0) fail(labels_csv.string(), " row ", row, ": unknown label '", label, "'");
        s.image_labels[k] = 1;
      }
      const fs::path image_path = image_dir / s.id;
      if (!fs::exists(image_path)) fail("missing file: ", image_path.string());
      const Tensor raw = read_png(image_path);
      original_size.emplace_back(raw.dim(2), raw.dim(1));
      s.pixels = preprocess(raw, options.image_size);
      if (index.contains(s.id)) fail(labels_csv.string(), " row ", row, ": duplicate image id ", s.id);
      index[s.id] = ds.samples.size();
      ds.samples.push_back(std::move(s));
    }
  }

  if (bbox_csv) {
    auto in = open_csv(*bbox_csv);
    std::string line;
    std::getline(in, line);
    int row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() < 6) fail(bbox_csv->string(), " row ", row, ": expected at least 6 columns");
      const int k = class_index_of(ds.classes, fields[1]);
      if (k < 0) fail(bbox_csv->string(), " row ", row, ": unknown label '", fields[1], "'");
      const auto it = index.find(fields[0]);
      auto warn = [&](const std::string& why) {
        ds.warnings.push_back(bbox_csv->string() + " row " + std::to_string(row) + ": " + why);
      };
      if (it == index.end()) {
        warn("image " + fields[0] + " not in labels file; row rejected");
        continue;
      }
      ImageSample& s = ds.samples[it->second];
      const auto [ow, oh] = original_size[it->second];
      const double x = parse_number(fields[2], *bbox_csv, row);
      const double y = parse_number(fields[3], *bbox_csv, row);
      const double w = parse_number(fields[4], *bbox_csv, row);
      const double h = parse_number(fields[5], *bbox_csv, row);
      if (!(w > 0 && h > 0) || x < 0 || y < 0 || x + w > ow || y + h > oh) {
        warn("box outside image bounds; row rejected");
        continue;
      }
      if (!s.image_labels[k]) {
        warn("box class " + fields[1] + " not among the image labels; row rejected");
        continue;
      }
      const double sx = static_cast<double>(options.image_size) / ow;
      const double sy = static_cast<double>(options.image_size) / oh;
      s.boxes.push_back({k, x * sx, y * sy, w * sx, h * sy});
      s.has_box[k] = 1;
    }
  }

  for (const auto& s : ds.samples) validate_sample(s, ds.image_size);
  return ds;
}

Dataset load_dataset_dir(const fs::path& dir, const LoadOptions& options) {
  const fs::path boxes = dir / kBoxesCsv;
  return load_dataset(dir / kImagesDir, dir / kLabelsCsv,
                      fs::exists(boxes) ? std::optional<fs::path>(boxes) : std::nullopt, options);
}

namespace {

std::string format_coord(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / kImagesDir);
  std::ofstream labels(dir / kLabelsCsv);
  std::ofstream boxes(dir / kBoxesCsv);
  if (!labels || !boxes) fail("cannot write dataset files under ", dir.string());

  labels << "Image Index,Finding Labels,OriginalImage[Width,Height]\n";
  boxes << "Image Index,Finding Label,Bbox [x,y,w,h]\n";
  for (const auto& s : dataset.samples) {
    write_png(dir / kImagesDir / s.id, s.pixels);
    std::string findings;
    for (int k = 0; k < s.num_classes(); ++k) {
      if (!s.image_labels[k]) continue;
      if (!findings.empty()) findings += '|';
      findings += dataset.classes[k];
    }
    if (findings.empty()) findings = "No Finding";
    labels << s.id << ',' << findings << ',' << s.pixels.dim(2) << ',' << s.pixels.dim(1) << '\n';
    for (const auto& b : s.boxes) {
      if (!s.has_box[b.class_index]) continue;
      boxes << s.id << ',' << dataset.classes[b.class_index] << ',' << format_coord(b.x) << ','
            << format_coord(b.y) << ',' << format_coord(b.w) << ',' << format_coord(b.h) << '\n';
    }
  }
}

}  // namespace ccg

#include "ccg/structure.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "ccg/image.hpp"

namespace ccg {
namespace {

struct Center {
  double intensity, y, x;
};

double gradient_at(const Tensor& g, int h, int w, int y, int x) {
  auto at = [&](int yy, int xx) {
    yy = std::clamp(yy, 0, h - 1);
    xx = std::clamp(xx, 0, w - 1);
    return g.data[static_cast<std::size_t>(yy) * w + xx];
  };
  const double gx = at(y, x + 1) - at(y, x - 1);
  const double gy = at(y + 1, x) - at(y - 1, x);
  return gx * gx + gy * gy;
}

// 4-connected components; returns count and fills `comp`.
int connected_components(const std::vector<int>& labels, int h, int w, std::vector<int>& comp) {
  comp.assign(labels.size(), -1);
  int count = 0;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (comp[start] >= 0) continue;
    comp[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / w, x = p % w;
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
        const int qi = q[0] * w + q[1];
        if (comp[qi] < 0 && labels[qi] == labels[p]) {
          comp[qi] = count;
          stack.push_back(qi);
        }
      }
    }
    ++count;
  }
  return count;
}

// Renumbers labels to 0..k-1 in order of first appearance; returns k.
int compact_labels(std::vector<int>& labels) {
  std::vector<int> remap;
  int next = 0;
  for (int& l : labels) {
    if (l >= static_cast<int>(remap.size())) remap.resize(static_cast<std::size_t>(l) + 1, -1);
    if (remap[l] < 0) remap[l] = next++;
    l = remap[l];
  }
  return next;
}

struct RegionStats {
  std::vector<long> area;
  std::vector<double> sum_i, sum_y, sum_x;
};

RegionStats region_stats(const Tensor& g, const std::vector<int>& labels, int count, int w) {
  RegionStats s{std::vector<long>(count), std::vector<double>(count), std::vector<double>(count),
                std::vector<double>(count)};
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int l = labels[p];
    ++s.area[l];
    s.sum_i[l] += g.data[p];
    s.sum_y[l] += static_cast<double>(p / w);
    s.sum_x[l] += static_cast<double>(p % w);
  }
  return s;
}

// Merges region `victim` into the 4-adjacent region with the closest mean
// intensity, then compacts the numbering.
void merge_into_neighbor(const Tensor& g, std::vector<int>& labels, int h, int w, int victim, int& count) {
  const RegionStats s = region_stats(g, labels, count, w);
  std::vector<char> adjacent(count, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (labels[y * w + x] != victim) continue;
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
        const int l = labels[q[0] * w + q[1]];
        if (l != victim) adjacent[l] = 1;
      }
    }
  }
  const double mine = s.sum_i[victim] / s.area[victim];
  int target = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int l = 0; l < count; ++l) {
    if (!adjacent[l]) continue;
    const double d = std::abs(s.sum_i[l] / s.area[l] - mine);
    if (d < best) {
      best = d;
      target = l;
    }
  }
  if (target < 0) {  // no neighbor (cannot happen with count > 1 on a connected grid)
    target = victim == 0 ? 1 : 0;
  }
  for (int& l : labels) {
    if (l == victim) l = target;
  }
  count = compact_labels(labels);
}

// Splits region `victim` at the median coordinate of its longer extent.
void split_region(std::vector<int>& labels, int w, int victim, int& count) {
  std::vector<int> ys, xs;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] != victim) continue;
    ys.push_back(static_cast<int>(p) / w);
    xs.push_back(static_cast<int>(p) % w);
  }
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  const bool along_y = (*ymax - *ymin) >= (*xmax - *xmin);

  auto threshold = [](std::vector<int> coords) {
    std::sort(coords.begin(), coords.end());
    int mid = coords[coords.size() / 2];
    if (mid == coords.front()) mid += 1;  // keep both halves non-empty
    return mid;
  };
  const bool use_y = along_y ? (*ymax > *ymin) : !(*xmax > *xmin);
  const int cut = threshold(use_y ? ys : xs);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] != victim) continue;
    const int coord = use_y ? static_cast<int>(p) / w : static_cast<int>(p) % w;
    if (coord >= cut) labels[p] = count;
  }
  ++count;
}

std::vector<double> area_resample(const std::vector<double>& src, int h, int w, int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w, 0.0);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int r = 0; r < out_h; ++r) {
    const double y0 = r * sy, y1 = (r + 1) * sy;
    for (int c = 0; c < out_w; ++c) {
      const double x0 = c * sx, x1 = (c + 1) * sx;
      double acc = 0, area = 0;
      for (int y = static_cast<int>(std::floor(y0)); y < std::min(h, static_cast<int>(std::ceil(y1))); ++y) {
        const double oy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (oy <= 0) continue;
        for (int x = static_cast<int>(std::floor(x0)); x < std::min(w, static_cast<int>(std::ceil(x1))); ++x) {
          const double ox = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (ox <= 0) continue;
          acc += oy * ox * src[static_cast<std::size_t>(y) * w + x];
          area += oy * ox;
        }
      }
      out[static_cast<std::size_t>(r) * out_w + c] = acc / area;
    }
  }
  return out;
}

}  // namespace

PatchSet slic_superpixels(const Tensor& gray_in, const SlicParams& params) {
  if (gray_in.rank() != 2) fail("slic: expected [H,W] image, got ", shape_string(gray_in.shape));
  const int h = gray_in.dim(0), w = gray_in.dim(1);
  const int n = h * w;
  const int m = params.patches;
  if (m < 1) fail("slic: patch count must be >= 1, got ", m);
  if (m > n) fail("slic: patch count ", m, " exceeds pixel count ", n);
  if (params.iterations < 1) fail("slic: iterations must be >= 1");
  if (!(params.compactness > 0)) fail("slic: compactness must be positive");

  PatchSet out{h, w, 1, std::vector<int>(static_cast<std::size_t>(n), 0)};
  if (m == 1) return out;

  // intensities on a 0..100 scale so compactness has its customary range
  Tensor g = gray_in;
  for (double& v : g.data) v *= 100.0;

  const int cols = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(m) * w / h))));
  const int rows = std::max(1, static_cast<int>(std::lround(static_cast<double>(m) / cols)));
  const double step = std::sqrt(static_cast<double>(n) / (rows * cols));

  std::vector<Center> centers;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      int cy = static_cast<int>((r + 0.5) * h / rows);
      int cx = static_cast<int>((c + 0.5) * w / cols);
      double best = gradient_at(g, h, w, cy, cx);
      int by = cy, bx = cx;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = cy + dy, xx = cx + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double gr = gradient_at(g, h, w, yy, xx);
          if (gr < best) {
            best = gr;
            by = yy;
            bx = xx;
          }
        }
      }
      centers.push_back({g.data[static_cast<std::size_t>(by) * w + bx], static_cast<double>(by),
                         static_cast<double>(bx)});
    }
  }

  const double spatial = params.compactness / step;
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  const int radius = static_cast<int>(std::ceil(step));
  for (int it = 0; it < params.iterations; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& ctr = centers[k];
      const int y0 = std::max(0, static_cast<int>(ctr.y) - radius), y1 = std::min(h, static_cast<int>(ctr.y) + radius + 1);
      const int x0 = std::max(0, static_cast<int>(ctr.x) - radius), x1 = std::min(w, static_cast<int>(ctr.x) + radius + 1);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const double dc = g.data[p] - ctr.intensity;
          const double dy = (y - ctr.y) * spatial, dx = (x - ctr.x) * spatial;
          const double d = dc * dc + dy * dy + dx * dx;
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = static_cast<int>(k);
          }
        }
      }
    }
    std::vector<Center> sums(centers.size(), {0, 0, 0});
    std::vector<long> counts(centers.size(), 0);
    for (int p = 0; p < n; ++p) {
      const int k = labels[p];
      if (k < 0) continue;
      sums[k].intensity += g.data[p];
      sums[k].y += p / w;
      sums[k].x += p % w;
      ++counts[k];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      centers[k] = {sums[k].intensity / counts[k], sums[k].y / counts[k], sums[k].x / counts[k]};
    }
  }
  // pixels outside every window join the nearest center spatially
  for (int p = 0; p < n; ++p) {
    if (labels[p] >= 0) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double dy = p / w - centers[k].y, dx = p % w - centers[k].x;
      if (dy * dy + dx * dx < best) {
        best = dy * dy + dx * dx;
        labels[p] = static_cast<int>(k);
      }
    }
  }

  // connectivity: every 4-connected component becomes its own region, tiny
  // components are absorbed by a neighbor
  std::vector<int> comp;
  int count = connected_components(labels, h, w, comp);
  labels = comp;
  const long min_area = std::max<long>(1, static_cast<long>(n / (rows * cols) / 4));
  for (;;) {
    const RegionStats s = region_stats(g, labels, count, w);
    int victim = -1;
    for (int l = 0; l < count; ++l) {
      if (s.area[l] < min_area && (victim < 0 || s.area[l] < s.area[victim])) victim = l;
    }
    if (victim < 0 || count <= 1) break;
    merge_into_neighbor(g, labels, h, w, victim, count);
  }

  while (count > m) {
    const RegionStats s = region_stats(g, labels, count, w);
    const int victim = static_cast<int>(std::min_element(s.area.begin(), s.area.end()) - s.area.begin());
    merge_into_neighbor(g, labels, h, w, victim, count);
  }
  while (count < m) {
    const RegionStats s = region_stats(g, labels, count, w);
    const int victim = static_cast<int>(std::max_element(s.area.begin(), s.area.end()) - s.area.begin());
    split_region(labels, w, victim, count);
  }

  // number regions by centroid (y, then x)
  const RegionStats s = region_stats(g, labels, count, w);
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ya = s.sum_y[a] / s.area[a], yb = s.sum_y[b] / s.area[b];
    if (ya != yb) return ya < yb;
    return s.sum_x[a] / s.area[a] < s.sum_x[b] / s.area[b];
  });
  std::vector<int> rank(static_cast<std::size_t>(count));
  for (int r = 0; r < count; ++r) rank[order[r]] = r;
  for (int& l : labels) l = rank[l];

  out.count = count;
  out.labels = std::move(labels);
  return out;
}

std::uint64_t patch_hash(const Tensor& gray, std::span<const std::uint8_t> mask) {
  if (gray.rank() != 2) fail("patch_hash: expected [H,W] image");
  const int h = gray.dim(0), w = gray.dim(1);
  if (mask.size() != static_cast<std::size_t>(h) * w) fail("patch_hash: mask size mismatch");

  int y0 = h, y1 = -1, x0 = w, x1 = -1;
  double sum = 0;
  long area = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask[static_cast<std::size_t>(y) * w + x]) continue;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      sum += gray.data[static_cast<std::size_t>(y) * w + x];
      ++area;
    }
  }
  if (area == 0) fail("patch_hash: empty patch");
  const double mean = sum / area;

  const int ch = y1 - y0 + 1, cw = x1 - x0 + 1;
  std::vector<double> crop(static_cast<std::size_t>(ch) * cw);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      const std::size_t p = static_cast<std::size_t>(y + y0) * w + (x + x0);
      crop[static_cast<std::size_t>(y) * cw + x] = mask[p] ? gray.data[p] : mean;
    }
  }
  const std::vector<double> cells = area_resample(crop, ch, cw, 8, 8);
  std::vector<double> sorted = cells;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[31] + sorted[32]);
  // resampling round-off must not turn a flat patch into noise bits
  const double tol = 1e-12 * (1.0 + std::abs(median));

  std::uint64_t code = 0;
  for (int i = 0; i < 64; ++i) {
    if (cells[i] - median > tol) code |= std::uint64_t{1} << i;
  }
  return code;
}

PatchHashes hash_patches(const Tensor& gray, const PatchSet& patches) {
  if (gray.shape != Shape{patches.height, patches.width}) fail("hash_patches: image and patch set sizes differ");
  PatchHashes out;
  out.codes.reserve(static_cast<std::size_t>(patches.count));
  std::vector<std::uint8_t> mask(patches.labels.size());
  for (int l = 0; l < patches.count; ++l) {
    for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = patches.labels[p] == l;
    out.codes.push_back(patch_hash(gray, mask));
  }
  return out;
}

PatchGraph patch_graph(const PatchHashes& a, const PatchHashes& b) {
  if (a.codes.size() != b.codes.size()) {
    fail("patch_graph: patch counts differ (", a.codes.size(), " vs ", b.codes.size(), ")");
  }
  const int m = static_cast<int>(a.codes.size());
  PatchGraph g{Tensor({m, m})};
  for (int l = 0; l < m; ++l) {
    for (int p = 0; p < m; ++p) g.values.data[l * m + p] = hamming(a.codes[l], b.codes[p]);
  }
  return g;
}

PatchGraphAggregator::PatchGraphAggregator(const std::string& name, int patches, double scale)
    : patches_(patches),
      scale_(scale),
      weight_(name + ".weight", Tensor({patches * patches}), false),
      bias_(name + ".bias", Tensor({1}), false) {
  if (patches < 1) fail("aggregator: patch count must be >= 1");
  if (!(scale > 0)) fail("aggregator: scale must be positive");
}

void PatchGraphAggregator::check(const PatchGraph& graph) const {
  if (graph.values.size() != weight_.value.size()) {
    fail(weight_.name, ": flattened graph of ", graph.values.size(), " entries does not match ",
         weight_.value.size(), " weights");
  }
}

double PatchGraphAggregator::forward(const PatchGraph& graph) const {
  check(graph);
  double s = bias_.value.data[0];
  for (std::size_t i = 0; i < graph.values.size(); ++i) s += weight_.value.data[i] * graph.values.data[i] / scale_;
  return s;
}

void PatchGraphAggregator::backward(const PatchGraph& graph, double d_out) {
  check(graph);
  for (std::size_t i = 0; i < graph.values.size(); ++i) weight_.grad.data[i] += d_out * graph.values.data[i] / scale_;
  bias_.grad.data[0] += d_out;
}

Tensor PatchGraphAggregator::pair_weights(const std::vector<std::vector<PatchGraph>>& graphs,
                                          bool skip_diagonal) const {
  const int n = static_cast<int>(graphs.size());
  Tensor out({n, n});
  for (int u = 0; u < n; ++u) {
    if (static_cast<int>(graphs[u].size()) != n) fail("pair_weights: graph table must be n x n");
    for (int v = 0; v < n; ++v) {
      if (skip_diagonal && u == v) continue;
      out.data[u * n + v] = forward(graphs[u][v]);
    }
  }
  return out;
}

void PatchGraphAggregator::backward_pairs(const std::vector<std::vector<PatchGraph>>& graphs,
                                          const Tensor& d_weights, bool skip_diagonal) {
  const int n = static_cast<int>(graphs.size());
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      if (skip_diagonal && u == v) continue;
      backward(graphs[u][v], d_weights.data[u * n + v]);
    }
  }
}

double intra_image_loss(const Tensor& pair_weights, const std::vector<FeatureMap>& features, ContrastGrad* grad) {
  std::vector<const Tensor*> f;
  f.reserve(features.size());
  for (const auto& fm : features) f.push_back(&fm.values);
  return contrast_loss(pair_weights, f, false, grad);
}

PatchSummary summarize_patches(const Tensor& image, const SlicParams& params) {
  const Tensor gray = to_gray(image);
  PatchSummary s;
  s.patches = slic_superpixels(gray, params);
  s.hashes = hash_patches(gray, s.patches);
  return s;
}

namespace {

constexpr char kCacheMagic[8] = {'C', 'C', 'G', 'P', 'A', 'T', 'C', 'H'};
constexpr std::uint32_t kCacheVersion = 1;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::filesystem::path patch_cache_path(const std::filesystem::path& dir, const std::string& image_id,
                                       const SlicParams& params) {
  char key[128];
  std::snprintf(key, sizeof key, "m=%d;c=%.17g;it=%d;v=%u", params.patches, params.compactness, params.iterations,
                kCacheVersion);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return dir / (image_id + "." + hex + ".patches");
}

void write_patch_cache(const std::filesystem::path& path, const PatchSummary& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write patch cache ", path.string());
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  out.write(kCacheMagic, sizeof kCacheMagic);
  put(kCacheVersion);
  put(static_cast<std::int32_t>(s.patches.height));
  put(static_cast<std::int32_t>(s.patches.width));
  put(static_cast<std::int32_t>(s.patches.count));
  for (int l : s.patches.labels) put(static_cast<std::int32_t>(l));
  for (std::uint64_t c : s.hashes.codes) put(c);
  if (!out) fail("error writing patch cache ", path.string());
}

std::optional<PatchSummary> read_patch_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  std::uint32_t version = 0;
  std::int32_t h = 0, w = 0, count = 0;
  auto get = [&](auto& v) { return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof v)); };
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) return std::nullopt;
  if (!get(version) || version != kCacheVersion) return std::nullopt;
  if (!get(h) || !get(w) || !get(count) || h <= 0 || w <= 0 || count <= 0) return std::nullopt;
  PatchSummary s;
  s.patches = {h, w, count, std::vector<int>(static_cast<std::size_t>(h) * w)};
  for (int& l : s.patches.labels) {
    std::int32_t v;
    if (!get(v) || v < 0 || v >= count) return std::nullopt;
    l = v;
  }
  s.hashes.codes.resize(static_cast<std::size_t>(count));
  for (auto& c : s.hashes.codes) {
    if (!get(c)) return std::nullopt;
  }
  return s;
}

}  // namespace ccg

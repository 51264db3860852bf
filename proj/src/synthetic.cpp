#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "ccg/data.hpp"

namespace ccg {
namespace {

struct Rect {
  int x, y, w, h;
  bool intersects(const Rect& o) const {
    return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
  }
};

void draw_background(Tensor& gray, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.04, 0.04);
  const double body = 0.55 + jitter(rng);
  const double lung = 0.25 + jitter(rng);
  const Rect left{static_cast<int>(0.10 * size), static_cast<int>(0.14 * size), static_cast<int>(0.34 * size),
                  static_cast<int>(0.72 * size)};
  const Rect right{static_cast<int>(0.56 * size), static_cast<int>(0.14 * size), static_cast<int>(0.34 * size),
                   static_cast<int>(0.72 * size)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool in_lung = (x >= left.x && x < left.x + left.w && y >= left.y && y < left.y + left.h) ||
                           (x >= right.x && x < right.x + right.w && y >= right.y && y < right.y + right.h);
      // mild top-to-bottom falloff
      gray.at(0, y, x) = (in_lung ? lung : body) + 0.05 * (0.5 - static_cast<double>(y) / size);
    }
  }
}

void draw_lesion(Tensor& gray, int class_index, const Rect& r) {
  const double cx = r.x + r.w / 2.0;
  const double cy = r.y + r.h / 2.0;
  const double rad = std::min(r.w, r.h) / 2.0;
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) {
      double& v = gray.at(0, y, x);
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      switch (class_index % 3) {
        case 0:  // bright disc
          if (d <= rad) v += 0.4;
          break;
        case 1:  // dark striped bar
          v -= ((y - r.y) / 3) % 2 == 0 ? 0.35 : 0.05;
          break;
        default:  // bright ring
          if (d <= rad && d >= 0.55 * rad) v += 0.35;
          break;
      }
    }
  }
}

}  // namespace

Dataset generate_synthetic_dataset(std::uint64_t seed, int n_images, const SyntheticSpec& spec) {
  if (n_images <= 0) fail("n_images must be positive, got ", n_images);
  if (spec.image_size < 8) fail("synthetic image_size too small: ", spec.image_size);
  if (spec.min_lesion < 1 || spec.max_lesion < spec.min_lesion || spec.max_lesion > spec.image_size) {
    fail("bad synthetic lesion size range [", spec.min_lesion, ", ", spec.max_lesion, "]");
  }
  if (spec.fraction_annotated < 0 || spec.fraction_annotated > 1) fail("fraction_annotated must be in [0,1]");

  Dataset ds;
  ds.classes = class_vocabulary(spec.num_classes);
  ds.image_size = spec.image_size;
  std::mt19937_64 rng(seed);
  const int size = spec.image_size;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> side(spec.min_lesion, spec.max_lesion);
  std::normal_distribution<double> noise(0.0, spec.noise);

  for (int n = 0; n < n_images; ++n) {
    ImageSample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn_%05d.png", n);
    s.id = id;
    s.image_labels.assign(spec.num_classes, 0);
    s.has_box.assign(spec.num_classes, 0);

    Tensor gray({1, size, size});
    draw_background(gray, size, rng);

    std::vector<Rect> placed;
    for (int k = 0; k < spec.num_classes; ++k) {
      if (unit(rng) >= spec.positive_rate) continue;
      Rect r{};
      for (int attempt = 0; attempt < 50; ++attempt) {
        const int w = side(rng);
        const int h = side(rng);
        r = {std::uniform_int_distribution<int>(0, size - w)(rng),
             std::uniform_int_distribution<int>(0, size - h)(rng), w, h};
        if (std::none_of(placed.begin(), placed.end(), [&](const Rect& o) { return o.intersects(r); })) break;
      }
      placed.push_back(r);
      draw_lesion(gray, k, r);
      s.image_labels[k] = 1;
      s.boxes.push_back({k, static_cast<double>(r.x), static_cast<double>(r.y), static_cast<double>(r.w),
                         static_cast<double>(r.h)});
    }

    s.pixels = Tensor({3, size, size});
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        // quantize to 8 bits so a PNG dump reloads to identical values
        const double v = std::clamp(gray.at(0, y, x) + noise(rng), 0.0, 1.0);
        const double q = std::round(v * 255.0) / 255.0;
        for (int c = 0; c < 3; ++c) s.pixels.at(c, y, x) = q;
      }
    }
    ds.samples.push_back(std::move(s));
  }

  std::vector<int> order(static_cast<std::size_t>(n_images));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int annotated = static_cast<int>(std::lround(spec.fraction_annotated * n_images));
  for (int i = 0; i < annotated; ++i) {
    ImageSample& s = ds.samples[order[i]];
    for (const auto& b : s.boxes) s.has_box[b.class_index] = 1;
  }
  return ds;
}

SyntheticSplits generate_synthetic_splits(std::uint64_t seed, int n_train, int n_test, const SyntheticSpec& spec) {
  SyntheticSpec test_spec = spec;
  test_spec.fraction_annotated = 1.0;
  return {generate_synthetic_dataset(seed, n_train, spec),
          generate_synthetic_dataset(seed ^ 0x5bd1e995ULL, n_test, test_spec)};
}

}  // namespace ccg

#include "ccg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>

namespace ccg {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail("cannot open ", path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }
void png_warning_fn(png_structp, png_const_charp) {}

class PngReader {
 public:
  explicit PngReader(std::FILE* f) {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    if (!png_) fail("png: cannot create read struct");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_read_struct(&png_, nullptr, nullptr);
      fail("png: cannot create info struct");
    }
    png_init_io(png_, f);
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }

 private:
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

class PngWriter {
 public:
  explicit PngWriter(std::FILE* f) {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    if (!png_) fail("png: cannot create write struct");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_write_struct(&png_, nullptr);
      fail("png: cannot create info struct");
    }
    png_init_io(png_, f);
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }

 private:
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

std::pair<int, int> png_size(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  PngReader reader(f.get());
  png_read_info(reader.png(), reader.info());
  return {static_cast<int>(png_get_image_width(reader.png(), reader.info())),
          static_cast<int>(png_get_image_height(reader.png(), reader.info()))};
}

Tensor read_png(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  PngReader reader(f.get());
  png_structp png = reader.png();
  png_infop info = reader.info();
  png_read_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host-order 16-bit samples
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  if (channels != 3) fail("png: unsupported channel layout in ", path.string());

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  Tensor out({3, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v;
        if (out_depth == 16) {
          std::uint16_t s;
          std::memcpy(&s, rows[y] + 2 * (3 * x + c), 2);
          v = s / 65535.0;
        } else {
          v = rows[y][3 * x + c] / 255.0;
        }
        out.at(c, y, x) = v;
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    fail("write_png: expected [3,H,W] or [1,H,W], got ", shape_string(image.shape));
  }
  const int channels = image.dim(0);
  const int height = image.dim(1);
  const int width = image.dim(2);

  std::vector<unsigned char> buffer(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(channels == 1 ? 0 : c, y, x);
        buffer[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }

  auto f = open_file(path, "wb");
  PngWriter writer(f.get());
  png_structp png = writer.png();
  png_infop info = writer.info();
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, buffer.data() + static_cast<std::size_t>(y) * width * 3);
  }
  png_write_end(png, nullptr);
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  if (image.rank() != 3) fail("resize_bilinear: expected [C,H,W], got ", shape_string(image.shape));
  if (out_h <= 0 || out_w <= 0) fail("resize_bilinear: bad output size ", out_h, "x", out_w);
  const int channels = image.dim(0);
  const int in_h = image.dim(1);
  const int in_w = image.dim(2);
  if (in_h == out_h && in_w == out_w) return image;

  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::max(src, 0.0);
      int lo = std::min(static_cast<int>(std::floor(src)), in - 1);
      int hi = std::min(lo + 1, in - 1);
      t[o] = {lo, hi, src - lo};
    }
    return t;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);

  Tensor out({channels, out_h, out_w});
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = image.at(c, a.lo, b.lo) * (1 - b.frac) + image.at(c, a.lo, b.hi) * b.frac;
        const double bot = image.at(c, a.hi, b.lo) * (1 - b.frac) + image.at(c, a.hi, b.hi) * b.frac;
        out.at(c, y, x) = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  return out;
}

Tensor to_gray(const Tensor& image) {
  if (image.rank() != 3) fail("to_gray: expected [C,H,W], got ", shape_string(image.shape));
  const int channels = image.dim(0);
  const int h = image.dim(1);
  const int w = image.dim(2);
  Tensor gray({h, w});
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) gray.data[static_cast<std::size_t>(y) * w + x] += image.at(c, y, x);
    }
  }
  for (double& v : gray.data) v /= channels;
  return gray;
}

}  // namespace ccg

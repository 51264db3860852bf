#pragma once

#include <filesystem>
#include <utility>

#include "ccg/tensor.hpp"

namespace ccg {

/// Reads an 8- or 16-bit gray/gray-alpha/RGB/RGBA PNG into a [3, H, W]
/// tensor with values in [0, 1]. Gray images are replicated across channels.
Tensor read_png(const std::filesystem::path& path);

/// (width, height) from the PNG header without decoding pixels.
std::pair<int, int> png_size(const std::filesystem::path& path);

/// Writes a [3, H, W] (or [1, H, W]) tensor in [0, 1] as an 8-bit RGB PNG.
/// Output bytes depend only on the pixel values.
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resize of a [C, H, W] tensor with half-pixel centers. Resizing
/// to the current size returns the input unchanged.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

/// Channel mean of a [C, H, W] tensor, returned as [H, W].
Tensor to_gray(const Tensor& image);

}  // namespace ccg

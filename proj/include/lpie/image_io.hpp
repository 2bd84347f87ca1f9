#pragma once

#include <filesystem>

#include "lpie/tensor.hpp"

// Images as 1 x 3 x H x W float tensors. `.png` files are 8-bit RGB scaled by
// 1/255 (grayscale, palette, alpha and 16-bit inputs are converted on read);
// `.lpt1` files are stored verbatim.
namespace lpie {

enum class ImageFormat { png, lpt1 };

// Throws FormatError(invalid) for unknown extensions.
ImageFormat image_format_for(const std::filesystem::path& path);

Tensor<float> load_image(const std::filesystem::path& path);
// PNG output clamps to [0, 1] and rounds to the nearest 8-bit level.
void save_image(const std::filesystem::path& path, const Tensor<float>& image);

Tensor<float> load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Tensor<float>& image);

}  // namespace lpie

#include "lpie/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "lpie/error.hpp"
#include "lpie/tensor_io.hpp"

namespace lpie {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* out = static_cast<std::string*>(png_get_error_ptr(png));
  if (out != nullptr) *out = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

ImageFormat image_format_for(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return ImageFormat::png;
  if (ext == ".lpt1" || ext == ".lpt") return ImageFormat::lpt1;
  throw FormatError(FormatError::Kind::invalid,
                    "unsupported image extension '" + ext + "' for '" + path.string() + "' (use .png or .lpt1)");
}

Tensor<float> load_png(const std::filesystem::path& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(FormatError::Kind::bad_magic, "'" + path.string() + "' is not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (png == nullptr) throw std::bad_alloc();
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(FormatError::Kind::invalid, "PNG decode failed for '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> t(Shape{1, 3, height, width});
  for (std::size_t c = 0; c < 3; ++c) {
    float* plane = t.plane(0, c);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) plane[y * width + x] = static_cast<float>(rows[y][x * 3 + c]) / 255.0f;
    }
  }
  return t;
}

void save_png(const std::filesystem::path& path, const Tensor<float>& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("save_png: expected a 1x3xHxW image, got " + s.str());
  std::vector<png_byte> pixels(s.h * s.w * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const float* plane = image.plane(0, c);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const float v = std::isnan(plane[i]) ? 0.0f : std::clamp(plane[i], 0.0f, 1.0f);
      pixels[i * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    File f(std::fopen(tmp.c_str(), "wb"));
    if (!f) throw FormatError(FormatError::Kind::io, "cannot open '" + tmp.string() + "' for writing");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (png == nullptr) throw std::bad_alloc();
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep> rows(s.h);
    for (std::size_t y = 0; y < s.h; ++y) rows[y] = pixels.data() + y * s.w * 3;
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      f.reset();
      std::filesystem::remove(tmp);
      throw FormatError(FormatError::Kind::io, "PNG encode failed for '" + path.string() + "': " + err);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0) throw FormatError(FormatError::Kind::io, "write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Tensor<float> load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError(FormatError::Kind::io, "no such file '" + path.string() + "'");
  if (image_format_for(path) == ImageFormat::png) return load_png(path);
  return load_lpt1(path);
}

void save_image(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image_format_for(path) == ImageFormat::png) {
    save_png(path, image);
  } else {
    save_lpt1(path, image);
  }
}

}  // namespace lpie

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lpie/kernels.hpp"
#include "lpie/tensor.hpp"

namespace lpie::support {

// Piecewise-smooth RGB test image: linear gradient background plus random
// discs and rectangles. Values in [0.05, 0.95].
Tensor<float> synth_image(std::uint64_t seed, std::size_t h, std::size_t w);

// Straight-loop references, all in double.
Tensor<double> conv2d_loop(const Tensor<double>& x, const Tensor<double>& weight, const Tensor<double>* bias,
                           std::size_t stride, bool same, std::size_t groups);
Tensor<double> maxpool_loop(const Tensor<double>& x);
// Half-sample symmetric boundary (d c b a | a b c d).
Tensor<double> psf_convolve_loop(const Tensor<double>& x, const std::vector<double>& kernel, std::size_t size);
// Mean valid-region SSIM computed from windowed sums evaluated directly with
// the 2-D Gaussian window.
double ssim_loop(const Tensor<double>& a, const Tensor<double>& b, double peak);
// Forward differences: mean |dh(p - t)| + mean |dv(p - t)|.
double gradient_loss_loop(const Tensor<double>& p, const Tensor<double>& t);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& p);

}  // namespace lpie::support

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lpie/config_text.hpp"
#include "lpie/rng.hpp"
#include "lpie/tensor.hpp"

// Image formation y = tonemap(clip(x * k + n)) with heteroscedastic Gaussian
// noise n ~ N(0, beta1 * (x * k) + beta2).
namespace lpie::degrade {

// Square, odd-sized, nonnegative kernel summing to 1. One kernel shared by
// every channel, or one kernel per channel.
struct Psf {
  std::size_t size = 1;
  std::vector<std::vector<double>> kernels{{1.0}};

  bool per_channel() const { return kernels.size() > 1; }
  const std::vector<double>& for_channel(std::size_t c) const { return kernels[per_channel() ? c : 0]; }
};

Psf make_dirac_psf(std::size_t size);
Psf make_gaussian_psf(std::size_t size, double sigma);
// Area-weighted disk (each tap = covered fraction, 16x16 supersampled).
Psf make_disk_psf(std::size_t size, double radius);
// Validates and normalizes explicit kernels (one shared, or one per channel).
Psf make_psf(std::size_t size, std::vector<std::vector<double>> kernels);

struct PsfSpec {
  enum class Kind { dirac, gaussian, disk };
  Kind kind = Kind::dirac;
  std::size_t size = 1;
  double sigma = 1.0;
  double radius = 1.0;

  Psf make() const;
  bool operator==(const PsfSpec&) const = default;
};

const char* to_string(PsfSpec::Kind kind);

inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

struct DegradationConfig {
  PsfSpec psf;
  double beta1 = 0.0;
  double beta2 = 0.0;
  // +inf disables the clip stage (including its lower clamp at 0).
  double x_max = kNoClip;
  bool tone_map = false;
  std::uint64_t seed = 0;

  void validate() const;
  void write(KeyValueText& kv, const std::string& prefix = "") const;
  // Overrides fields of `base` with the keys present under `prefix`.
  static DegradationConfig read(KeyValueText& kv, const std::string& prefix, const DegradationConfig& base);
  bool operator==(const DegradationConfig&) const = default;
};

enum class Task { denoise, deblur, hdr, udc };
Task parse_task(const std::string& name);
const char* to_string(Task task);
DegradationConfig preset(Task task);

// Per-channel 2-D convolution with half-sample symmetric boundary reflection.
template <typename T>
Tensor<T> psf_convolve(const Tensor<T>& x, const Psf& psf);

// x + n, n ~ N(0, beta1 * x + beta2) per element, drawn in row-major order.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& x, double beta1, double beta2, Rng& rng);

// clamp(x, 0, x_max)
template <typename T>
Tensor<T> clip_range(const Tensor<T>& x, double x_max);

inline constexpr double kToneKnee = 0.25;

double tone_map(double x);
double inverse_tone_map(double y);
template <typename T>
Tensor<T> tone_map(const Tensor<T>& x);
template <typename T>
Tensor<T> inverse_tone_map(const Tensor<T>& y);

template <typename T>
Tensor<T> apply(const Tensor<T>& x, const DegradationConfig& cfg);
// Same as apply() but drawing the noise from `rng`.
template <typename T>
Tensor<T> apply(const Tensor<T>& x, const DegradationConfig& cfg, Rng& rng);

// Linear-radiance stand-in for an HDR capture: inverse tone map of an ordinary
// [0, 1] image (values capped at y_cap first) times an exposure factor.
template <typename T>
Tensor<T> synthesize_hdr(const Tensor<T>& x, double exposure, double y_cap = 0.99);

}  // namespace lpie::degrade

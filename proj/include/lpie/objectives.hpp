#pragma once

#include <string>

#include "lpie/autodiff.hpp"
#include "lpie/config_text.hpp"
#include "lpie/tensor.hpp"

// L = alpha * (1 - SSIM) + L1 + beta * L_grad, plus PSNR/SSIM metrics.
namespace lpie::objectives {

enum class GradientOperator { forward_difference, sobel };

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.1;
  GradientOperator gradient = GradientOperator::forward_difference;

  void validate() const;
  void write(KeyValueText& kv, const std::string& prefix = "") const;
  static LossWeights read(KeyValueText& kv, const std::string& prefix = "");
  bool operator==(const LossWeights&) const = default;
};

// SSIM window: 11x11 Gaussian, sigma 1.5; C1 = (0.01 peak)^2, C2 = (0.03 peak)^2.
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Normalized 1-D window; the 2-D window is its outer product.
const std::vector<double>& ssim_window_1d();

// Differentiable losses; each returns a 1x1x1x1 node.
template <typename T>
ad::Var<T> l1_loss(const ad::Var<T>& pred, const ad::Var<T>& target);
// Mean of the valid-region SSIM map over every (n, c) plane.
template <typename T>
ad::Var<T> ssim(const ad::Var<T>& pred, const ad::Var<T>& target, double peak = 1.0);
template <typename T>
ad::Var<T> ssim_loss(const ad::Var<T>& pred, const ad::Var<T>& target);
template <typename T>
ad::Var<T> gradient_loss(const ad::Var<T>& pred, const ad::Var<T>& target,
                         GradientOperator op = GradientOperator::forward_difference);
template <typename T>
ad::Var<T> combined_loss(const ad::Var<T>& pred, const ad::Var<T>& target, const LossWeights& w = {});

// Plain-tensor evaluations of the same quantities.
template <typename T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& target, double peak = 1.0);
template <typename T>
double gradient_loss(const Tensor<T>& pred, const Tensor<T>& target,
                     GradientOperator op = GradientOperator::forward_difference);
template <typename T>
double combined_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& w = {});

// 10 log10(peak^2 / MSE); +inf when the images are identical.
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, double peak = 1.0);

}  // namespace lpie::objectives

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "lpie/tensor.hpp"

// Forward and adjoint kernels for the spatial operators. These are plain
// functions over tensors; lpie::ad wires them into the tape.
namespace lpie::kernels {

enum class Padding { zero_same, valid };

struct ConvParams {
  std::size_t stride = 1;
  Padding padding = Padding::zero_same;
  std::size_t groups = 1;
};

struct ConvGeometry {
  std::size_t n, c_in, h, w;
  std::size_t c_out, k, groups, stride, pad;
  std::size_t h_out, w_out;
};

// Validates shapes and derives output geometry. Throws ShapeError naming the
// offending dimension.
ConvGeometry conv_geometry(const Shape& input, const Shape& weight, const ConvParams& p);

// weight: [c_out, c_in/groups, k, k]; bias: empty or [1, c_out, 1, 1].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias, const ConvParams& p);

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const ConvGeometry& g);

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& input, const ConvGeometry& g);

template <typename T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& grad_out);

// 2x2/stride-2 max pooling. `argmax` receives the winning window slot
// (0..3, row-major); ties keep the first occurrence.
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input, std::vector<std::uint8_t>* argmax);

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, const std::vector<std::uint8_t>& argmax,
                              const Shape& input_shape);

// Bilinear 2x upsampling, align_corners = false: src = (dst + 0.5) / 2 - 0.5,
// negative coordinates clamped to 0 and the upper neighbour clamped to n - 1.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& input);

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out, const Shape& input_shape);

}  // namespace lpie::kernels

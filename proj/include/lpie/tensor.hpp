#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lpie/error.hpp"

namespace lpie {

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense N x C x H x W array, row-major in (n, c, h, w) order.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[offset(n, c, y, x)]; }
  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const { return data_[offset(n, c, y, x)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  void fill(T v);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

// Copies channels [first, first + count) of every batch item.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count);

// Stacks single-item tensors along the batch dimension.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items);

template <typename T>
Tensor<T> batch_item(const Tensor<T>& x, std::size_t n);

// Crops a spatial window [y0, y0+h) x [x0, x0+w).
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);

// Whole-sample reflection padding on the bottom/right edges (used to reach
// spatial sizes divisible by the network's downsampling factor).
template <typename T>
Tensor<T> reflect_pad_bottom_right(const Tensor<T>& x, std::size_t pad_h, std::size_t pad_w);

// Dihedral group D4: index 0..7 = (optional horizontal flip) then 0..3
// counter-clockwise quarter turns. Index 0 is the identity.
inline constexpr int kDihedralCount = 8;

template <typename T>
Tensor<T> dihedral(const Tensor<T>& x, int index);

template <typename T>
Tensor<T> inverse_dihedral(const Tensor<T>& x, int index);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace lpie

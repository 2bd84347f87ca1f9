#include "lpie/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace lpie {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape), data_(shape.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
  const Shape& s = x.shape();
  if (first + count > s.c) {
    throw ShapeError("slice_channels: channel range [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") exceeds c=" + std::to_string(s.c));
  }
  Tensor<T> out({s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(x.plane(n, first), count * s.plane(), out.plane(n, 0));
  }
  return out;
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  Shape s = items.front().shape();
  if (s.n != 1) throw ShapeError("stack_batch: items must have n=1");
  Tensor<T> out({items.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != s) {
      throw ShapeError("stack_batch: item " + std::to_string(i) + " shape " + items[i].shape().str() +
                       " differs from " + s.str());
    }
    std::copy(items[i].data().begin(), items[i].data().end(), out.plane(i, 0));
  }
  return out;
}

template <typename T>
Tensor<T> batch_item(const Tensor<T>& x, std::size_t n) {
  const Shape& s = x.shape();
  if (n >= s.n) throw ShapeError("batch_item: index " + std::to_string(n) + " >= n=" + std::to_string(s.n));
  Tensor<T> out({1, s.c, s.h, s.w});
  std::copy_n(x.plane(n, 0), s.c * s.plane(), out.plane(0, 0));
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const Shape& s = x.shape();
  if (y0 + h > s.h) throw ShapeError("crop: rows exceed h=" + std::to_string(s.h));
  if (x0 + w > s.w) throw ShapeError("crop: columns exceed w=" + std::to_string(s.w));
  Tensor<T> out({s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(src + (y0 + y) * s.w + x0, w, dst + y * w);
      }
    }
  }
  return out;
}

namespace {

// Whole-sample reflection of index i into [0, n).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

template <typename T>
Tensor<T> reflect_pad_bottom_right(const Tensor<T>& x, std::size_t pad_h, std::size_t pad_w) {
  const Shape& s = x.shape();
  if (pad_h == 0 && pad_w == 0) return x;
  if (s.h == 0 || s.w == 0) throw ShapeError("reflect_pad: empty spatial extent");
  const std::size_t oh = s.h + pad_h;
  const std::size_t ow = s.w + pad_w;
  Tensor<T> out({s.n, s.c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y), s.h);
        for (std::size_t xx = 0; xx < ow; ++xx) {
          dst[y * ow + xx] = src[sy * s.w + reflect_index(static_cast<std::ptrdiff_t>(xx), s.w)];
        }
      }
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t xx = 0; xx < s.w; ++xx) dst[y * s.w + xx] = src[y * s.w + (s.w - 1 - xx)];
      }
    }
  }
  return out;
}

// One counter-clockwise quarter turn: out[y][x] = in[x][W-1-y].
template <typename T>
Tensor<T> rotate_ccw(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out({s.n, s.c, s.w, s.h});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < s.w; ++y) {
        for (std::size_t xx = 0; xx < s.h; ++xx) dst[y * s.h + xx] = src[xx * s.w + (s.w - 1 - y)];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> rotate_ccw_times(Tensor<T> x, int turns) {
  turns = ((turns % 4) + 4) % 4;
  for (int i = 0; i < turns; ++i) x = rotate_ccw(x);
  return x;
}

void check_dihedral_index(int index) {
  if (index < 0 || index >= kDihedralCount) {
    throw std::out_of_range("dihedral index " + std::to_string(index) + " outside [0, 8)");
  }
}

}  // namespace

template <typename T>
Tensor<T> dihedral(const Tensor<T>& x, int index) {
  check_dihedral_index(index);
  Tensor<T> out = index >= 4 ? flip_horizontal(x) : x;
  return rotate_ccw_times(std::move(out), index % 4);
}

template <typename T>
Tensor<T> inverse_dihedral(const Tensor<T>& x, int index) {
  check_dihedral_index(index);
  Tensor<T> out = rotate_ccw_times(x, -(index % 4));
  return index >= 4 ? flip_horizontal(out) : out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shapes " + a.shape().str() + " vs " + b.shape().str());
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

#define LPIE_INSTANTIATE(T)                                                                     \
  template class Tensor<T>;                                                                     \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> stack_batch(std::span<const Tensor<T>>);                                   \
  template Tensor<T> batch_item(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> crop(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> reflect_pad_bottom_right(const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> dihedral(const Tensor<T>&, int);                                           \
  template Tensor<T> inverse_dihedral(const Tensor<T>&, int);                                   \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);

LPIE_INSTANTIATE(float)
LPIE_INSTANTIATE(double)
#undef LPIE_INSTANTIATE

}  // namespace lpie

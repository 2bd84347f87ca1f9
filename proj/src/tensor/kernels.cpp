#include "lpie/kernels.hpp"

#include <algorithm>
#include <string>

namespace lpie::kernels {

namespace {

using Index = std::ptrdiff_t;

// Range [lo, hi) of output columns whose tap `k_off` lands inside [0, extent).
struct TapRange {
  Index lo;
  Index hi;
};

TapRange tap_range(Index k_off, Index pad, Index stride, Index extent, Index out_extent) {
  // input coordinate = o * stride + k_off - pad
  Index lo = 0;
  if (pad - k_off > 0) lo = (pad - k_off + stride - 1) / stride;
  Index last = extent - 1 + pad - k_off;
  Index hi = last < 0 ? 0 : last / stride + 1;
  hi = std::min(hi, out_extent);
  return {lo, std::max(lo, hi)};
}

constexpr std::size_t kParallelThreshold = 1 << 14;

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& weight, const ConvParams& p) {
  ConvGeometry g{};
  g.n = input.n;
  g.c_in = input.c;
  g.h = input.h;
  g.w = input.w;
  g.c_out = weight.n;
  g.k = weight.h;
  g.groups = p.groups;
  g.stride = p.stride;
  if (p.groups == 0) throw ShapeError("conv2d: groups must be positive");
  if (p.stride != 1 && p.stride != 2) throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(p.stride));
  if (weight.h != weight.w) {
    throw ShapeError("conv2d: kernel must be square, got kh=" + std::to_string(weight.h) + " kw=" + std::to_string(weight.w));
  }
  if (g.k % 2 == 0) throw ShapeError("conv2d: kernel size k=" + std::to_string(g.k) + " must be odd");
  if (g.c_in % g.groups != 0) {
    throw ShapeError("conv2d: c_in=" + std::to_string(g.c_in) + " not divisible by groups=" + std::to_string(g.groups));
  }
  if (g.c_out % g.groups != 0) {
    throw ShapeError("conv2d: c_out=" + std::to_string(g.c_out) + " not divisible by groups=" + std::to_string(g.groups));
  }
  if (weight.c != g.c_in / g.groups) {
    throw ShapeError("conv2d: weight c_in/groups=" + std::to_string(weight.c) + " but input c_in/groups=" +
                     std::to_string(g.c_in / g.groups));
  }
  g.pad = p.padding == Padding::zero_same ? (g.k - 1) / 2 : 0;
  if (g.h + 2 * g.pad < g.k) throw ShapeError("conv2d: zero-sized output height (h=" + std::to_string(g.h) + ")");
  if (g.w + 2 * g.pad < g.k) throw ShapeError("conv2d: zero-sized output width (w=" + std::to_string(g.w) + ")");
  g.h_out = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.w_out = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias, const ConvParams& p) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), p);
  if (bias != nullptr && bias->numel() != g.c_out) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias->numel()) + " != c_out=" + std::to_string(g.c_out));
  }
  Tensor<T> out({g.n, g.c_out, g.h_out, g.w_out});
  const std::size_t cin_g = g.c_in / g.groups;
  const std::size_t cout_g = g.c_out / g.groups;
  const Index k = static_cast<Index>(g.k);
  const Index s = static_cast<Index>(g.stride);
  const Index pad = static_cast<Index>(g.pad);
  const Index H = static_cast<Index>(g.h), W = static_cast<Index>(g.w);
  const Index Ho = static_cast<Index>(g.h_out), Wo = static_cast<Index>(g.w_out);
  const bool pointwise = g.k == 1 && g.stride == 1;
  const Index jobs = static_cast<Index>(g.n * g.c_out);
  const std::size_t work = out.numel() * cin_g * g.k * g.k;

#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (Index job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / g.c_out;
    const std::size_t oc = static_cast<std::size_t>(job) % g.c_out;
    const std::size_t grp = oc / cout_g;
    T* dst = out.plane(n, oc);
    const T b = bias != nullptr ? (*bias)[oc] : T(0);
    std::fill(dst, dst + Ho * Wo, b);
    for (std::size_t icg = 0; icg < cin_g; ++icg) {
      const T* src = input.plane(n, grp * cin_g + icg);
      const T* wk = weight.plane(oc, icg);
      if (pointwise) {
        const T wv = wk[0];
        for (Index i = 0; i < H * W; ++i) dst[i] += wv * src[i];
        continue;
      }
      for (Index ky = 0; ky < k; ++ky) {
        const TapRange rows = tap_range(ky, pad, s, H, Ho);
        for (Index kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          const TapRange cols = tap_range(kx, pad, s, W, Wo);
          for (Index oy = rows.lo; oy < rows.hi; ++oy) {
            const Index base = (oy * s + ky - pad) * W + kx - pad;
            T* drow = dst + oy * Wo;
            if (s == 1) {
              for (Index ox = cols.lo; ox < cols.hi; ++ox) drow[ox] += wv * src[base + ox];
            } else {
              for (Index ox = cols.lo; ox < cols.hi; ++ox) drow[ox] += wv * src[base + ox * s];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const ConvGeometry& g) {
  Tensor<T> gin({g.n, g.c_in, g.h, g.w});
  const std::size_t cin_g = g.c_in / g.groups;
  const std::size_t cout_g = g.c_out / g.groups;
  const Index k = static_cast<Index>(g.k);
  const Index s = static_cast<Index>(g.stride);
  const Index pad = static_cast<Index>(g.pad);
  const Index H = static_cast<Index>(g.h), W = static_cast<Index>(g.w);
  const Index Ho = static_cast<Index>(g.h_out), Wo = static_cast<Index>(g.w_out);
  const bool pointwise = g.k == 1 && g.stride == 1;
  const Index jobs = static_cast<Index>(g.n * g.c_in);
  const std::size_t work = grad_out.numel() * cin_g * g.k * g.k;

#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (Index job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / g.c_in;
    const std::size_t ic = static_cast<std::size_t>(job) % g.c_in;
    const std::size_t grp = ic / cin_g;
    const std::size_t icg = ic % cin_g;
    T* dst = gin.plane(n, ic);
    for (std::size_t ocg = 0; ocg < cout_g; ++ocg) {
      const std::size_t oc = grp * cout_g + ocg;
      const T* go = grad_out.plane(n, oc);
      const T* wk = weight.plane(oc, icg);
      if (pointwise) {
        const T wv = wk[0];
        for (Index i = 0; i < H * W; ++i) dst[i] += wv * go[i];
        continue;
      }
      for (Index ky = 0; ky < k; ++ky) {
        const TapRange rows = tap_range(ky, pad, s, H, Ho);
        for (Index kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          const TapRange cols = tap_range(kx, pad, s, W, Wo);
          for (Index oy = rows.lo; oy < rows.hi; ++oy) {
            const Index base = (oy * s + ky - pad) * W + kx - pad;
            const T* grow = go + oy * Wo;
            if (s == 1) {
              for (Index ox = cols.lo; ox < cols.hi; ++ox) dst[base + ox] += wv * grow[ox];
            } else {
              for (Index ox = cols.lo; ox < cols.hi; ++ox) dst[base + ox * s] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
  return gin;
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& input, const ConvGeometry& g) {
  const std::size_t cin_g = g.c_in / g.groups;
  const std::size_t cout_g = g.c_out / g.groups;
  Tensor<T> gw({g.c_out, cin_g, g.k, g.k});
  const Index k = static_cast<Index>(g.k);
  const Index s = static_cast<Index>(g.stride);
  const Index pad = static_cast<Index>(g.pad);
  const Index H = static_cast<Index>(g.h), W = static_cast<Index>(g.w);
  const Index Ho = static_cast<Index>(g.h_out), Wo = static_cast<Index>(g.w_out);
  const Index jobs = static_cast<Index>(g.c_out * cin_g);
  const std::size_t work = grad_out.numel() * cin_g * g.k * g.k;

#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (Index job = 0; job < jobs; ++job) {
    const std::size_t oc = static_cast<std::size_t>(job) / cin_g;
    const std::size_t icg = static_cast<std::size_t>(job) % cin_g;
    const std::size_t ic = (oc / cout_g) * cin_g + icg;
    T* wk = gw.plane(oc, icg);
    for (Index ky = 0; ky < k; ++ky) {
      const TapRange rows = tap_range(ky, pad, s, H, Ho);
      for (Index kx = 0; kx < k; ++kx) {
        const TapRange cols = tap_range(kx, pad, s, W, Wo);
        T acc = 0;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* src = input.plane(n, ic);
          const T* go = grad_out.plane(n, oc);
          for (Index oy = rows.lo; oy < rows.hi; ++oy) {
            const Index base = (oy * s + ky - pad) * W + kx - pad;
            const T* grow = go + oy * Wo;
            T row_acc = 0;
            if (s == 1) {
              for (Index ox = cols.lo; ox < cols.hi; ++ox) row_acc += grow[ox] * src[base + ox];
            } else {
              for (Index ox = cols.lo; ox < cols.hi; ++ox) row_acc += grow[ox] * src[base + ox * s];
            }
            acc += row_acc;
          }
        }
        wk[ky * k + kx] = acc;
      }
    }
  }
  return gw;
}

template <typename T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& grad_out) {
  const Shape& s = grad_out.shape();
  Tensor<T> gb({1, s.c, 1, 1});
  for (std::size_t c = 0; c < s.c; ++c) {
    T acc = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* go = grad_out.plane(n, c);
      T plane_acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) plane_acc += go[i];
      acc += plane_acc;
    }
    gb[c] = acc;
  }
  return gb;
}

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input, std::vector<std::uint8_t>* argmax) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0) throw ShapeError("maxpool2x2: odd height h=" + std::to_string(s.h));
  if (s.w % 2 != 0) throw ShapeError("maxpool2x2: odd width w=" + std::to_string(s.w));
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor<T> out({s.n, s.c, oh, ow});
  if (argmax != nullptr) argmax->assign(out.numel(), 0);
  const Index planes = static_cast<Index>(s.n * s.c);

#pragma omp parallel for schedule(static) if (input.numel() > kParallelThreshold)
  for (Index pi = 0; pi < planes; ++pi) {
    const T* src = input.data().data() + pi * s.plane();
    T* dst = out.data().data() + pi * oh * ow;
    std::uint8_t* am = argmax != nullptr ? argmax->data() + pi * oh * ow : nullptr;
    for (std::size_t y = 0; y < oh; ++y) {
      const T* r0 = src + 2 * y * s.w;
      const T* r1 = r0 + s.w;
      for (std::size_t x = 0; x < ow; ++x) {
        const T v[4] = {r0[2 * x], r0[2 * x + 1], r1[2 * x], r1[2 * x + 1]};
        std::uint8_t best = 0;
        for (std::uint8_t i = 1; i < 4; ++i) {
          if (v[i] > v[best]) best = i;
        }
        dst[y * ow + x] = v[best];
        if (am != nullptr) am[y * ow + x] = best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, const std::vector<std::uint8_t>& argmax,
                              const Shape& input_shape) {
  Tensor<T> gin(input_shape);
  const std::size_t oh = input_shape.h / 2, ow = input_shape.w / 2;
  const std::size_t planes = input_shape.n * input_shape.c;
  for (std::size_t pi = 0; pi < planes; ++pi) {
    const T* go = grad_out.data().data() + pi * oh * ow;
    const std::uint8_t* am = argmax.data() + pi * oh * ow;
    T* dst = gin.data().data() + pi * input_shape.plane();
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::uint8_t slot = am[y * ow + x];
        const std::size_t iy = 2 * y + slot / 2, ix = 2 * x + slot % 2;
        dst[iy * input_shape.w + ix] += go[y * ow + x];
      }
    }
  }
  return gin;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> upsample_taps(std::size_t n) {
  std::vector<Tap> taps(2 * n);
  for (std::size_t d = 0; d < 2 * n; ++d) {
    double src = (static_cast<double>(d) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const auto i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double l = src - static_cast<double>(i0);
    taps[d] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& input) {
  const Shape& s = input.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("upsample2x: empty spatial extent " + s.str());
  const std::size_t oh = 2 * s.h, ow = 2 * s.w;
  const auto ty = upsample_taps(s.h);
  const auto tx = upsample_taps(s.w);
  Tensor<T> out({s.n, s.c, oh, ow});
  const Index planes = static_cast<Index>(s.n * s.c);

#pragma omp parallel for schedule(static) if (out.numel() > kParallelThreshold)
  for (Index pi = 0; pi < planes; ++pi) {
    const T* src = input.data().data() + pi * s.plane();
    T* dst = out.data().data() + pi * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const Tap& a = ty[y];
      const T* r0 = src + a.i0 * s.w;
      const T* r1 = src + a.i1 * s.w;
      const T wy0 = static_cast<T>(a.w0), wy1 = static_cast<T>(a.w1);
      for (std::size_t x = 0; x < ow; ++x) {
        const Tap& b = tx[x];
        const T wx0 = static_cast<T>(b.w0), wx1 = static_cast<T>(b.w1);
        dst[y * ow + x] = wy0 * (wx0 * r0[b.i0] + wx1 * r0[b.i1]) + wy1 * (wx0 * r1[b.i0] + wx1 * r1[b.i1]);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  const Shape& s = input_shape;
  const std::size_t oh = 2 * s.h, ow = 2 * s.w;
  const auto ty = upsample_taps(s.h);
  const auto tx = upsample_taps(s.w);
  Tensor<T> gin(s);
  const Index planes = static_cast<Index>(s.n * s.c);

#pragma omp parallel for schedule(static) if (grad_out.numel() > kParallelThreshold)
  for (Index pi = 0; pi < planes; ++pi) {
    const T* go = grad_out.data().data() + pi * oh * ow;
    T* dst = gin.data().data() + pi * s.plane();
    for (std::size_t y = 0; y < oh; ++y) {
      const Tap& a = ty[y];
      T* r0 = dst + a.i0 * s.w;
      T* r1 = dst + a.i1 * s.w;
      const T wy0 = static_cast<T>(a.w0), wy1 = static_cast<T>(a.w1);
      for (std::size_t x = 0; x < ow; ++x) {
        const Tap& b = tx[x];
        const T g = go[y * ow + x];
        const T wx0 = static_cast<T>(b.w0), wx1 = static_cast<T>(b.w1);
        r0[b.i0] += wy0 * wx0 * g;
        r0[b.i1] += wy0 * wx1 * g;
        r1[b.i0] += wy1 * wx0 * g;
        r1[b.i1] += wy1 * wx1 * g;
      }
    }
  }
  return gin;
}

#define LPIE_INSTANTIATE(T)                                                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvParams&);     \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);          \
  template Tensor<T> conv2d_grad_weight(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);         \
  template Tensor<T> conv2d_grad_bias(const Tensor<T>&);                                                  \
  template Tensor<T> maxpool2x2(const Tensor<T>&, std::vector<std::uint8_t>*);                            \
  template Tensor<T> maxpool2x2_backward(const Tensor<T>&, const std::vector<std::uint8_t>&, const Shape&); \
  template Tensor<T> upsample2x(const Tensor<T>&);                                                        \
  template Tensor<T> upsample2x_backward(const Tensor<T>&, const Shape&);

LPIE_INSTANTIATE(float)
LPIE_INSTANTIATE(double)
#undef LPIE_INSTANTIATE

}  // namespace lpie::kernels

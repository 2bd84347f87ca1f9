#include "lpie/objectives.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <memory>

namespace lpie::objectives {

namespace {

template <typename T>
void check_pair(const ad::Var<T>& a, const ad::Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
  }
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

template <typename T>
std::array<ad::Var<T>, 2> pair(const ad::Var<T>& a, const ad::Var<T>& b) {
  return {a, b};
}

template <typename T>
void log_signs(ad::Tape<T>& tape, const std::vector<double>& v) {
  if (!tape.logging_branches()) return;
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    word = (word << 2) | (v[i] > 0 ? 1u : v[i] < 0 ? 2u : 0u);
    if (i % 32 == 31) tape.log_branch(word), word = 0;
  }
  tape.log_branch(word);
}

double sign(double v) { return v > 0 ? 1.0 : v < 0 ? -1.0 : 0.0; }

template <typename T>
Tensor<T> to_tensor(const Shape& s, const std::vector<double>& g, double scale) {
  Tensor<T> out(s);
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<T>(g[i] * scale);
  return out;
}

// Linear finite-difference operator: value at (y, x) = sum coef * d(y + dy, x + dx)
// over the region [0, h - extent_y) x [0, w - extent_x).
struct Stencil {
  std::vector<std::array<int, 3>> taps;  // dy, dx, coef
  std::size_t extent_y, extent_x;
};

std::vector<Stencil> stencils(GradientOperator op) {
  if (op == GradientOperator::forward_difference) {
    return {Stencil{{{0, 0, -1}, {0, 1, 1}}, 0, 1}, Stencil{{{0, 0, -1}, {1, 0, 1}}, 1, 0}};
  }
  return {Stencil{{{0, 0, -1}, {0, 2, 1}, {1, 0, -2}, {1, 2, 2}, {2, 0, -1}, {2, 2, 1}}, 2, 2},
          Stencil{{{0, 0, -1}, {2, 0, 1}, {0, 1, -2}, {2, 1, 2}, {0, 2, -1}, {2, 2, 1}}, 2, 2}};
}

const char* op_name(GradientOperator op) {
  return op == GradientOperator::forward_difference ? "forward_difference" : "sobel";
}

// ---- SSIM plane kernels ---------------------------------------------------

// Valid separable filtering with the SSIM window: (h, w) -> (h - 10, w - 10).
void filter_valid(const double* in, std::size_t h, std::size_t w, double* tmp, double* out) {
  const auto& k = ssim_window_1d();
  const std::size_t K = k.size();
  const std::size_t wo = w - K + 1, ho = h - K + 1;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0;
      for (std::size_t j = 0; j < K; ++j) acc += k[j] * in[y * w + x + j];
      tmp[y * wo + x] = acc;
    }
  }
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0;
      for (std::size_t i = 0; i < K; ++i) acc += k[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = acc;
    }
  }
}

// Adjoint of filter_valid: (h - 10, w - 10) -> (h, w).
void filter_valid_adjoint(const double* g, std::size_t h, std::size_t w, double* tmp, double* out) {
  const auto& k = ssim_window_1d();
  const std::size_t K = k.size();
  const std::size_t wo = w - K + 1, ho = h - K + 1;
  std::fill(tmp, tmp + h * wo, 0.0);
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t x = 0; x < wo; ++x) tmp[(y + i) * wo + x] += k[i] * g[y * wo + x];
    }
  }
  std::fill(out, out + h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      for (std::size_t j = 0; j < K; ++j) out[y * w + x + j] += k[j] * tmp[y * wo + x];
    }
  }
}

struct SsimResult {
  double mean = 0;
  std::size_t map_size = 0;
  // Partials of the SSIM map w.r.t. mu_x, mu_y, E[x^2] (= E[y^2]) and E[xy], per plane.
  std::shared_ptr<std::vector<double>> d_mx, d_my, d_sq, d_xy;
};

template <typename T>
SsimResult ssim_forward(const Tensor<T>& a, const Tensor<T>& b, double peak, bool keep_partials) {
  const Shape& s = a.shape();
  if (!(peak > 0)) throw std::invalid_argument("ssim: peak must be positive");
  if (s.h < kSsimWindow || s.w < kSsimWindow) {
    throw ShapeError("ssim: image " + s.str() + " is smaller than the 11x11 window");
  }
  const double c1 = (kSsimK1 * peak) * (kSsimK1 * peak);
  const double c2 = (kSsimK2 * peak) * (kSsimK2 * peak);
  const std::size_t ho = s.h - kSsimWindow + 1, wo = s.w - kSsimWindow + 1;
  const std::size_t plane_out = ho * wo;
  const std::size_t planes = s.n * s.c;

  SsimResult r;
  r.map_size = plane_out * planes;
  if (keep_partials) {
    for (auto* p : {&r.d_mx, &r.d_my, &r.d_sq, &r.d_xy}) *p = std::make_shared<std::vector<double>>(r.map_size);
  }
  std::vector<double> plane_sum(planes, 0.0);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(planes); ++pi) {
    const std::size_t p = static_cast<std::size_t>(pi);
    const std::size_t hw = s.plane();
    std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw), tmp(s.h * wo);
    const T* pa = a.data().data() + p * hw;
    const T* pb = b.data().data() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      x[i] = static_cast<double>(pa[i]);
      y[i] = static_cast<double>(pb[i]);
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    std::vector<double> mx(plane_out), my(plane_out), exx(plane_out), eyy(plane_out), exy(plane_out);
    filter_valid(x.data(), s.h, s.w, tmp.data(), mx.data());
    filter_valid(y.data(), s.h, s.w, tmp.data(), my.data());
    filter_valid(xx.data(), s.h, s.w, tmp.data(), exx.data());
    filter_valid(yy.data(), s.h, s.w, tmp.data(), eyy.data());
    filter_valid(xy.data(), s.h, s.w, tmp.data(), exy.data());
    double acc = 0;
    for (std::size_t i = 0; i < plane_out; ++i) {
      const double a1 = 2 * mx[i] * my[i] + c1;
      const double a2 = 2 * (exy[i] - mx[i] * my[i]) + c2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + c1;
      const double b2 = exx[i] - mx[i] * mx[i] + eyy[i] - my[i] * my[i] + c2;
      const double den = b1 * b2;
      const double sv = a1 * a2 / den;
      acc += sv;
      if (keep_partials) {
        const std::size_t o = p * plane_out + i;
        (*r.d_mx)[o] = (2 * my[i] * a2 - 2 * my[i] * a1) / den - sv * (2 * mx[i] / b1 - 2 * mx[i] / b2);
        (*r.d_my)[o] = (2 * mx[i] * a2 - 2 * mx[i] * a1) / den - sv * (2 * my[i] / b1 - 2 * my[i] / b2);
        (*r.d_sq)[o] = -sv / b2;
        (*r.d_xy)[o] = 2 * a1 / den;
      }
    }
    plane_sum[p] = acc;
  }
  double total = 0;
  for (double v : plane_sum) total += v;
  r.mean = total / static_cast<double>(r.map_size);
  return r;
}

}  // namespace

const std::vector<double>& ssim_window_1d() {
  static const std::vector<double> window = [] {
    std::vector<double> k(kSsimWindow);
    double s = 0;
    const double c = static_cast<double>(kSsimWindow / 2);
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
      const double d = static_cast<double>(i) - c;
      k[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
      s += k[i];
    }
    for (double& v : k) v /= s;
    return k;
  }();
  return window;
}

void LossWeights::validate() const {
  if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("alpha", "must be finite and >= 0");
  if (!(beta >= 0) || !std::isfinite(beta)) throw ConfigError("beta", "must be finite and >= 0");
}

void LossWeights::write(KeyValueText& kv, const std::string& prefix) const {
  kv.set(prefix + "alpha", alpha);
  kv.set(prefix + "beta", beta);
  kv.set(prefix + "gradient_operator", std::string(op_name(gradient)));
}

LossWeights LossWeights::read(KeyValueText& kv, const std::string& prefix) {
  LossWeights w;
  w.alpha = kv.take_double(prefix + "alpha", w.alpha);
  w.beta = kv.take_double(prefix + "beta", w.beta);
  if (auto op = kv.take(prefix + "gradient_operator")) {
    if (*op == "forward_difference") {
      w.gradient = GradientOperator::forward_difference;
    } else if (*op == "sobel") {
      w.gradient = GradientOperator::sobel;
    } else {
      throw ConfigError(prefix + "gradient_operator", "expected forward_difference or sobel, got '" + *op + "'");
    }
  }
  try {
    w.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.key(), e.what());
  }
  return w;
}

// ---- differentiable losses --------------------------------------------------

template <typename T>
ad::Var<T> l1_loss(const ad::Var<T>& pred, const ad::Var<T>& target) {
  check_pair(pred, target, "l1_loss");
  const std::size_t n = pred.value().numel();
  if (n == 0) throw ShapeError("l1_loss: empty tensors");
  auto diff = std::make_shared<std::vector<double>>(n);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*diff)[i] = static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]);
    acc += std::abs((*diff)[i]);
  }
  log_signs(pred.tape(), *diff);
  ad::Node<T>* pn = &pred.node();
  ad::Node<T>* tn = &target.node();
  const Shape s = pred.shape();
  return pred.tape().make(Tensor<T>({1, 1, 1, 1}, static_cast<T>(acc / static_cast<double>(n))), "l1_loss",
                          pair(pred, target), [=](const Tensor<T>& go) {
                            std::vector<double> g(n);
                            for (std::size_t i = 0; i < n; ++i) g[i] = sign((*diff)[i]);
                            const double scale = static_cast<double>(go[0]) / static_cast<double>(n);
                            if (pn->requires_grad) pn->accumulate(to_tensor<T>(s, g, scale));
                            if (tn->requires_grad) tn->accumulate(to_tensor<T>(s, g, -scale));
                          });
}

template <typename T>
ad::Var<T> ssim(const ad::Var<T>& pred, const ad::Var<T>& target, double peak) {
  check_pair(pred, target, "ssim");
  const bool grads = pred.tape().recording() && (pred.requires_grad() || target.requires_grad());
  SsimResult r = ssim_forward(pred.value(), target.value(), peak, grads);
  ad::Node<T>* pn = &pred.node();
  ad::Node<T>* tn = &target.node();
  const Shape s = pred.shape();
  return pred.tape().make(
      Tensor<T>({1, 1, 1, 1}, static_cast<T>(r.mean)), "ssim", pair(pred, target), [=](const Tensor<T>& go) {
        const std::size_t planes = s.n * s.c, hw = s.plane();
        const std::size_t ho = s.h - kSsimWindow + 1, wo = s.w - kSsimWindow + 1, po = ho * wo;
        const double scale = static_cast<double>(go[0]) / static_cast<double>(r.map_size);
        std::vector<double> gx(planes * hw), gy(planes * hw);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(planes); ++pi) {
          const std::size_t p = static_cast<std::size_t>(pi);
          std::vector<double> g(po), tmp(s.h * wo), bm_x(hw), bm_y(hw), b_sq(hw), b_xy(hw);
          const auto back = [&](const std::vector<double>& d, std::vector<double>& out) {
            for (std::size_t i = 0; i < po; ++i) g[i] = scale * d[p * po + i];
            filter_valid_adjoint(g.data(), s.h, s.w, tmp.data(), out.data());
          };
          back(*r.d_mx, bm_x);
          back(*r.d_my, bm_y);
          back(*r.d_sq, b_sq);
          back(*r.d_xy, b_xy);
          const T* pa = pn->value.data().data() + p * hw;
          const T* pb = tn->value.data().data() + p * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double x = static_cast<double>(pa[i]), y = static_cast<double>(pb[i]);
            gx[p * hw + i] = bm_x[i] + 2 * x * b_sq[i] + y * b_xy[i];
            gy[p * hw + i] = bm_y[i] + 2 * y * b_sq[i] + x * b_xy[i];
          }
        }
        if (pn->requires_grad) pn->accumulate(to_tensor<T>(s, gx, 1.0));
        if (tn->requires_grad) tn->accumulate(to_tensor<T>(s, gy, 1.0));
      });
}

template <typename T>
ad::Var<T> ssim_loss(const ad::Var<T>& pred, const ad::Var<T>& target) {
  ad::Var<T> one = pred.tape().constant(Tensor<T>({1, 1, 1, 1}, T(1)));
  return ad::sub(one, ssim(pred, target, 1.0));
}

template <typename T>
ad::Var<T> gradient_loss(const ad::Var<T>& pred, const ad::Var<T>& target, GradientOperator op) {
  check_pair(pred, target, "gradient_loss");
  const Shape s = pred.shape();
  const auto sts = stencils(op);
  for (const auto& st : sts) {
    if (s.h <= st.extent_y || s.w <= st.extent_x) {
      throw ShapeError("gradient_loss: image " + s.str() + " too small for the " + op_name(op) + " operator");
    }
  }
  const std::size_t planes = s.n * s.c, hw = s.plane();
  std::vector<double> d(planes * hw);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]);
  }
  // Per stencil: field values (for signs) and the 1/count weight.
  auto fields = std::make_shared<std::vector<std::vector<double>>>();
  std::vector<double> weights;
  double total = 0;
  for (const auto& st : sts) {
    const std::size_t ho = s.h - st.extent_y, wo = s.w - st.extent_x;
    std::vector<double> f(planes * ho * wo);
    double acc = 0;
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
          double v = 0;
          for (const auto& [dy, dx, c] : st.taps) v += c * d[p * hw + (y + dy) * s.w + x + dx];
          f[(p * ho + y) * wo + x] = v;
          acc += std::abs(v);
        }
      }
    }
    weights.push_back(1.0 / static_cast<double>(f.size()));
    total += acc * weights.back();
    log_signs(pred.tape(), f);
    fields->push_back(std::move(f));
  }
  ad::Node<T>* pn = &pred.node();
  ad::Node<T>* tn = &target.node();
  return pred.tape().make(
      Tensor<T>({1, 1, 1, 1}, static_cast<T>(total)), "gradient_loss", pair(pred, target),
      [=](const Tensor<T>& go) {
        std::vector<double> g(planes * hw, 0.0);
        for (std::size_t k = 0; k < sts.size(); ++k) {
          const auto& st = sts[k];
          const auto& f = (*fields)[k];
          const std::size_t ho = s.h - st.extent_y, wo = s.w - st.extent_x;
          const double scale = static_cast<double>(go[0]) * weights[k];
          for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t y = 0; y < ho; ++y) {
              for (std::size_t x = 0; x < wo; ++x) {
                const double sg = scale * sign(f[(p * ho + y) * wo + x]);
                if (sg == 0) continue;
                for (const auto& [dy, dx, c] : st.taps) g[p * hw + (y + dy) * s.w + x + dx] += c * sg;
              }
            }
          }
        }
        if (pn->requires_grad) pn->accumulate(to_tensor<T>(s, g, 1.0));
        if (tn->requires_grad) tn->accumulate(to_tensor<T>(s, g, -1.0));
      });
}

template <typename T>
ad::Var<T> combined_loss(const ad::Var<T>& pred, const ad::Var<T>& target, const LossWeights& w) {
  w.validate();
  ad::Var<T> loss = l1_loss(pred, target);
  if (w.alpha != 0) loss = ad::add(loss, ad::scalar_mul(ssim_loss(pred, target), static_cast<T>(w.alpha)));
  if (w.beta != 0) loss = ad::add(loss, ad::scalar_mul(gradient_loss(pred, target, w.gradient), static_cast<T>(w.beta)));
  return loss;
}

// ---- tensor evaluations -----------------------------------------------------

namespace {

template <typename T, typename F>
double evaluate(const Tensor<T>& pred, const Tensor<T>& target, F f) {
  ad::Tape<T> tape(false);
  return static_cast<double>(f(tape.constant(pred), tape.constant(target)).value()[0]);
}

}  // namespace

template <typename T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return evaluate(pred, target, [](const auto& a, const auto& b) { return l1_loss(a, b); });
}

template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& target, double peak) {
  if (pred.shape() != target.shape()) throw ShapeError("ssim: shapes differ");
  return ssim_forward(pred, target, peak, false).mean;
}

template <typename T>
double gradient_loss(const Tensor<T>& pred, const Tensor<T>& target, GradientOperator op) {
  return evaluate(pred, target, [op](const auto& a, const auto& b) { return gradient_loss(a, b, op); });
}

template <typename T>
double combined_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& w) {
  return evaluate(pred, target, [&w](const auto& a, const auto& b) { return combined_loss(a, b, w); });
}

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, double peak) {
  if (pred.shape() != target.shape()) throw ShapeError("psnr: shapes differ");
  if (pred.numel() == 0) throw ShapeError("psnr: empty tensors");
  double se = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / (se / static_cast<double>(pred.numel())));
}

#define LPIE_INSTANTIATE(T)                                                                           \
  template ad::Var<T> l1_loss(const ad::Var<T>&, const ad::Var<T>&);                                  \
  template ad::Var<T> ssim(const ad::Var<T>&, const ad::Var<T>&, double);                             \
  template ad::Var<T> ssim_loss(const ad::Var<T>&, const ad::Var<T>&);                                \
  template ad::Var<T> gradient_loss(const ad::Var<T>&, const ad::Var<T>&, GradientOperator);          \
  template ad::Var<T> combined_loss(const ad::Var<T>&, const ad::Var<T>&, const LossWeights&);        \
  template double l1_loss(const Tensor<T>&, const Tensor<T>&);                                        \
  template double ssim(const Tensor<T>&, const Tensor<T>&, double);                                   \
  template double gradient_loss(const Tensor<T>&, const Tensor<T>&, GradientOperator);                \
  template double combined_loss(const Tensor<T>&, const Tensor<T>&, const LossWeights&);              \
  template double psnr(const Tensor<T>&, const Tensor<T>&, double);

LPIE_INSTANTIATE(float)
LPIE_INSTANTIATE(double)

}  // namespace lpie::objectives

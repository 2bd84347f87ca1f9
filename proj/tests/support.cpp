#include "support.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include "lpie/rng.hpp"

namespace lpie::support {

Tensor<float> synth_image(std::uint64_t seed, std::size_t h, std::size_t w) {
  Rng r(seed);
  Tensor<float> t({1, 3, h, w});
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = r.uniform(0.2, 0.8);
    gx[c] = r.uniform(-0.3, 0.3);
    gy[c] = r.uniform(-0.3, 0.3);
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        t.at(0, c, y, x) = static_cast<float>(base[c] + gx[c] * (static_cast<double>(x) / w - 0.5) +
                                              gy[c] * (static_cast<double>(y) / h - 0.5));
  const double n = static_cast<double>(std::min(h, w));
  for (int s = 0; s < 6; ++s) {
    const double cx = r.uniform(0, static_cast<double>(w)), cy = r.uniform(0, static_cast<double>(h));
    const double rad = r.uniform(4, n / 3.0);
    double col[3];
    for (double& v : col) v = r.uniform(0.05, 0.95);
    const bool rect = r.below(2) == 1;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const bool in = rect ? (std::abs(dx) < rad && std::abs(dy) < rad * 0.6) : (dx * dx + dy * dy < rad * rad);
        if (in)
          for (std::size_t c = 0; c < 3; ++c) t.at(0, c, y, x) = static_cast<float>(col[c]);
      }
    }
  }
  return t;
}

Tensor<double> conv2d_loop(const Tensor<double>& x, const Tensor<double>& weight, const Tensor<double>* bias,
                           std::size_t stride, bool same, std::size_t groups) {
  const Shape& s = x.shape();
  const Shape& ws = weight.shape();
  const std::size_t k = ws.h;
  const long pad = same ? static_cast<long>(k / 2) : 0;
  const std::size_t ho = (s.h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (s.w + 2 * pad - k) / stride + 1;
  const std::size_t cin_g = s.c / groups, cout_g = ws.n / groups;
  Tensor<double> out({s.n, ws.n, ho, wo});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xo = 0; xo < wo; ++xo) {
          double acc = bias ? (*bias)[o] : 0.0;
          const std::size_t g = o / cout_g;
          for (std::size_t ci = 0; ci < cin_g; ++ci)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long iy = static_cast<long>(y * stride + i) - pad;
                const long ix = static_cast<long>(xo * stride + j) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w)) continue;
                acc += weight.at(o, ci, i, j) * x.at(n, g * cin_g + ci, iy, ix);
              }
          out.at(n, o, y, xo) = acc;
        }
  return out;
}

Tensor<double> maxpool_loop(const Tensor<double>& x) {
  const Shape& s = x.shape();
  Tensor<double> out({s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h / 2; ++y)
        for (std::size_t xx = 0; xx < s.w / 2; ++xx) {
          double m = -INFINITY;
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) m = std::max(m, x.at(n, c, 2 * y + i, 2 * xx + j));
          out.at(n, c, y, xx) = m;
        }
  return out;
}

namespace {

std::size_t mirror(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

}  // namespace

Tensor<double> psf_convolve_loop(const Tensor<double>& x, const std::vector<double>& kernel, std::size_t size) {
  const Shape& s = x.shape();
  const long r = static_cast<long>(size / 2);
  Tensor<double> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx) {
          double acc = 0;
          for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
              const double kv = kernel[(dy + r) * size + (dx + r)];
              acc += kv * x.at(n, c, mirror(static_cast<long>(y) - dy, s.h), mirror(static_cast<long>(xx) - dx, s.w));
            }
          out.at(n, c, y, xx) = acc;
        }
  return out;
}

double ssim_loop(const Tensor<double>& a, const Tensor<double>& b, double peak) {
  constexpr std::size_t win = 11;
  constexpr double sigma = 1.5;
  double g[win], gsum = 0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const Shape& s = a.shape();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y + win <= s.h; ++y)
        for (std::size_t x = 0; x + win <= s.w; ++x) {
          double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
          for (std::size_t i = 0; i < win; ++i)
            for (std::size_t j = 0; j < win; ++j) {
              const double wgt = g[i] * g[j];
              const double u = a.at(n, c, y + i, x + j), v = b.at(n, c, y + i, x + j);
              mx += wgt * u;
              my += wgt * v;
              sxx += wgt * u * u;
              syy += wgt * v * v;
              sxy += wgt * u * v;
            }
          const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
          total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++count;
        }
  return total / static_cast<double>(count);
}

double gradient_loss_loop(const Tensor<double>& p, const Tensor<double>& t) {
  const Shape& s = p.shape();
  double h = 0, v = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const double d = p.at(n, c, y, x) - t.at(n, c, y, x);
          if (x + 1 < s.w) h += std::abs((p.at(n, c, y, x + 1) - t.at(n, c, y, x + 1)) - d);
          if (y + 1 < s.h) v += std::abs((p.at(n, c, y + 1, x) - t.at(n, c, y + 1, x)) - d);
        }
  return h / static_cast<double>(s.n * s.c * s.h * (s.w - 1)) + v / static_cast<double>(s.n * s.c * (s.h - 1) * s.w);
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("lpie_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace lpie::support

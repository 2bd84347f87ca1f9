#include "lpie/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lpie::degrade {

namespace {

void check_size(std::size_t size) {
  if (size == 0 || size % 2 == 0) throw std::invalid_argument("PSF size must be odd, got " + std::to_string(size));
}

std::vector<double> normalized(std::vector<double> k) {
  double s = 0;
  for (double v : k) s += v;
  if (!(s > 0)) throw std::invalid_argument("PSF kernel has no mass");
  for (double& v : k) v /= s;
  return k;
}

// Half-sample symmetric reflection: ... c b a | a b c ... | c b a ...
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return m < static_cast<std::ptrdiff_t>(n) ? static_cast<std::size_t>(m) : static_cast<std::size_t>(period - 1 - m);
}

}  // namespace

Psf make_psf(std::size_t size, std::vector<std::vector<double>> kernels) {
  check_size(size);
  if (kernels.empty()) throw std::invalid_argument("PSF needs at least one kernel");
  for (auto& k : kernels) {
    if (k.size() != size * size) throw std::invalid_argument("PSF kernel has wrong number of taps");
    for (double v : k) {
      if (!(v >= 0) || !std::isfinite(v)) throw std::invalid_argument("PSF taps must be finite and nonnegative");
    }
    k = normalized(std::move(k));
  }
  return Psf{size, std::move(kernels)};
}

Psf make_dirac_psf(std::size_t size) {
  check_size(size);
  std::vector<double> k(size * size, 0.0);
  k[(size / 2) * size + size / 2] = 1.0;
  return Psf{size, {std::move(k)}};
}

Psf make_gaussian_psf(std::size_t size, double sigma) {
  check_size(size);
  if (!(sigma > 0)) throw std::invalid_argument("gaussian PSF sigma must be positive");
  const auto r = static_cast<double>(size / 2);
  std::vector<double> k(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - r;
      const double dx = static_cast<double>(x) - r;
      k[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
  }
  return Psf{size, {normalized(std::move(k))}};
}

Psf make_disk_psf(std::size_t size, double radius) {
  check_size(size);
  if (!(radius > 0)) throw std::invalid_argument("disk PSF radius must be positive");
  constexpr int kSub = 16;
  const auto r = static_cast<double>(size / 2);
  std::vector<double> k(size * size, 0.0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      int inside = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double dy = static_cast<double>(y) - r - 0.5 + (sy + 0.5) / kSub;
          const double dx = static_cast<double>(x) - r - 0.5 + (sx + 0.5) / kSub;
          inside += dx * dx + dy * dy <= radius * radius;
        }
      }
      k[y * size + x] = static_cast<double>(inside);
    }
  }
  return Psf{size, {normalized(std::move(k))}};
}

Psf PsfSpec::make() const {
  switch (kind) {
    case Kind::dirac: return make_dirac_psf(size);
    case Kind::gaussian: return make_gaussian_psf(size, sigma);
    case Kind::disk: return make_disk_psf(size, radius);
  }
  throw std::logic_error("unknown PSF kind");
}

const char* to_string(PsfSpec::Kind kind) {
  switch (kind) {
    case PsfSpec::Kind::dirac: return "dirac";
    case PsfSpec::Kind::gaussian: return "gaussian";
    case PsfSpec::Kind::disk: return "disk";
  }
  return "unknown";
}

// ---- config -----------------------------------------------------------------

void DegradationConfig::validate() const {
  if (psf.size == 0 || psf.size % 2 == 0) throw ConfigError("psf_size", "must be odd");
  if (psf.kind == PsfSpec::Kind::gaussian && !(psf.sigma > 0)) throw ConfigError("psf_sigma", "must be positive");
  if (psf.kind == PsfSpec::Kind::disk && !(psf.radius > 0)) throw ConfigError("psf_radius", "must be positive");
  if (!(beta1 >= 0) || !std::isfinite(beta1)) throw ConfigError("beta1", "must be finite and >= 0");
  if (!(beta2 >= 0) || !std::isfinite(beta2)) throw ConfigError("beta2", "must be finite and >= 0");
  if (!(beta1 + beta2 < 1)) throw ConfigError("beta1", "beta1 + beta2 must be below 1");
  if (!(x_max > 0)) throw ConfigError("x_max", "must be positive");
}

void DegradationConfig::write(KeyValueText& kv, const std::string& prefix) const {
  kv.set(prefix + "psf", std::string(to_string(psf.kind)));
  kv.set(prefix + "psf_size", static_cast<std::int64_t>(psf.size));
  kv.set(prefix + "psf_sigma", psf.sigma);
  kv.set(prefix + "psf_radius", psf.radius);
  kv.set(prefix + "beta1", beta1);
  kv.set(prefix + "beta2", beta2);
  kv.set(prefix + "x_max", x_max);
  kv.set(prefix + "tone_map", tone_map);
  kv.set(prefix + "seed", std::to_string(seed));
}

DegradationConfig DegradationConfig::read(KeyValueText& kv, const std::string& prefix,
                                          const DegradationConfig& base) {
  DegradationConfig c = base;
  if (auto kind = kv.take(prefix + "psf")) {
    if (*kind == "dirac") {
      c.psf.kind = PsfSpec::Kind::dirac;
    } else if (*kind == "gaussian") {
      c.psf.kind = PsfSpec::Kind::gaussian;
    } else if (*kind == "disk") {
      c.psf.kind = PsfSpec::Kind::disk;
    } else {
      throw ConfigError(prefix + "psf", "expected dirac, gaussian or disk, got '" + *kind + "'");
    }
  }
  const std::int64_t size = kv.take_int(prefix + "psf_size", static_cast<std::int64_t>(c.psf.size));
  if (size <= 0) throw ConfigError(prefix + "psf_size", "must be positive");
  c.psf.size = static_cast<std::size_t>(size);
  c.psf.sigma = kv.take_double(prefix + "psf_sigma", c.psf.sigma);
  c.psf.radius = kv.take_double(prefix + "psf_radius", c.psf.radius);
  c.beta1 = kv.take_double(prefix + "beta1", c.beta1);
  c.beta2 = kv.take_double(prefix + "beta2", c.beta2);
  c.x_max = kv.take_double(prefix + "x_max", c.x_max);
  c.tone_map = kv.take_bool(prefix + "tone_map", c.tone_map);
  c.seed = kv.take_u64(prefix + "seed", c.seed);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.key(), e.what());
  }
  return c;
}

Task parse_task(const std::string& name) {
  if (name == "denoise") return Task::denoise;
  if (name == "deblur") return Task::deblur;
  if (name == "hdr") return Task::hdr;
  if (name == "udc") return Task::udc;
  throw ConfigError("task", "expected denoise, deblur, hdr or udc, got '" + name + "'");
}

const char* to_string(Task task) {
  switch (task) {
    case Task::denoise: return "denoise";
    case Task::deblur: return "deblur";
    case Task::hdr: return "hdr";
    case Task::udc: return "udc";
  }
  return "unknown";
}

DegradationConfig preset(Task task) {
  DegradationConfig c;
  switch (task) {
    case Task::denoise:
      c.beta2 = (25.0 / 255.0) * (25.0 / 255.0);
      break;
    case Task::deblur:
      c.psf = {PsfSpec::Kind::gaussian, 9, 1.6, 1.0};
      break;
    case Task::hdr:
      c.x_max = 1.0;
      c.tone_map = true;
      break;
    case Task::udc:
      c.psf = {PsfSpec::Kind::disk, 7, 1.0, 2.5};
      c.beta1 = 0.005;
      c.beta2 = 1e-4;
      c.x_max = 1.0;
      c.tone_map = true;
      break;
  }
  return c;
}

// ---- stages -----------------------------------------------------------------

template <typename T>
Tensor<T> psf_convolve(const Tensor<T>& x, const Psf& psf) {
  check_size(psf.size);
  const Shape& s = x.shape();
  if (psf.per_channel() && psf.kernels.size() != s.c) {
    throw ShapeError("per-channel PSF has " + std::to_string(psf.kernels.size()) + " kernels for " +
                     std::to_string(s.c) + " channels");
  }
  const auto k = static_cast<std::ptrdiff_t>(psf.size);
  const std::ptrdiff_t r = k / 2;
  std::vector<std::size_t> rows(s.h + 2 * psf.size), cols(s.w + 2 * psf.size);
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows.size()); ++i) rows[i] = reflect(i - k, s.h);
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cols.size()); ++i) cols[i] = reflect(i - k, s.w);

  Tensor<T> out(s);
  const auto planes = static_cast<std::ptrdiff_t>(s.n * s.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < planes; ++pi) {
    const std::size_t c = static_cast<std::size_t>(pi) % s.c;
    const auto& kern = psf.for_channel(c);
    const T* in = x.plane(pi / s.c, c);
    T* o = out.plane(pi / s.c, c);
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t xx = 0; xx < s.w; ++xx) {
        double acc = 0;
        for (std::ptrdiff_t i = 0; i < k; ++i) {
          // Convolution: out(y) = sum_i k(i) in(y - (i - r)).
          const std::size_t sy = rows[static_cast<std::ptrdiff_t>(y) - (i - r) + k];
          const T* row = in + sy * s.w;
          const double* kr = kern.data() + i * k;
          for (std::ptrdiff_t j = 0; j < k; ++j) {
            acc += kr[j] * static_cast<double>(row[cols[static_cast<std::ptrdiff_t>(xx) - (j - r) + k]]);
          }
        }
        o[y * s.w + xx] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> add_noise(const Tensor<T>& x, double beta1, double beta2, Rng& rng) {
  if (!(beta1 >= 0) || !(beta2 >= 0)) throw std::invalid_argument("noise coefficients must be nonnegative");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x[i]);
    const double var = beta1 * v + beta2;
    if (var < 0) {
      throw std::invalid_argument("negative noise variance at element " + std::to_string(i) + " (signal " +
                                  std::to_string(v) + ")");
    }
    out[i] = static_cast<T>(v + std::sqrt(var) * rng.normal());
  }
  return out;
}

template <typename T>
Tensor<T> clip_range(const Tensor<T>& x, double x_max) {
  if (!(x_max > 0)) throw std::invalid_argument("x_max must be positive");
  Tensor<T> out(x.shape());
  const T hi = static_cast<T>(x_max);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::clamp(x[i], T(0), hi);
  return out;
}

double tone_map(double x) {
  if (!(x >= 0)) throw std::domain_error("tone_map: input must be >= 0");
  return x / (x + kToneKnee);
}

double inverse_tone_map(double y) {
  if (!(y >= 0 && y < 1)) throw std::domain_error("inverse_tone_map: input must lie in [0, 1)");
  return kToneKnee * y / (1 - y);
}

template <typename T>
Tensor<T> tone_map(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = static_cast<T>(tone_map(static_cast<double>(x[i])));
  return out;
}

template <typename T>
Tensor<T> inverse_tone_map(const Tensor<T>& y) {
  Tensor<T> out(y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) out[i] = static_cast<T>(inverse_tone_map(static_cast<double>(y[i])));
  return out;
}

template <typename T>
Tensor<T> apply(const Tensor<T>& x, const DegradationConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor<T> y = psf_convolve(x, cfg.psf.make());
  if (cfg.beta1 > 0 || cfg.beta2 > 0) y = add_noise(y, cfg.beta1, cfg.beta2, rng);
  if (std::isfinite(cfg.x_max)) y = clip_range(y, cfg.x_max);
  if (cfg.tone_map) y = tone_map(y);
  return y;
}

template <typename T>
Tensor<T> apply(const Tensor<T>& x, const DegradationConfig& cfg) {
  Rng rng(cfg.seed);
  return apply(x, cfg, rng);
}

template <typename T>
Tensor<T> synthesize_hdr(const Tensor<T>& x, double exposure, double y_cap) {
  if (!(exposure > 0)) throw std::invalid_argument("exposure must be positive");
  if (!(y_cap > 0 && y_cap < 1)) throw std::invalid_argument("y_cap must lie in (0, 1)");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double y = std::clamp(static_cast<double>(x[i]), 0.0, y_cap);
    out[i] = static_cast<T>(inverse_tone_map(y) * exposure);
  }
  return out;
}

#define LPIE_INSTANTIATE(T)                                                        \
  template Tensor<T> psf_convolve(const Tensor<T>&, const Psf&);                   \
  template Tensor<T> add_noise(const Tensor<T>&, double, double, Rng&);            \
  template Tensor<T> clip_range(const Tensor<T>&, double);                         \
  template Tensor<T> tone_map(const Tensor<T>&);                                   \
  template Tensor<T> inverse_tone_map(const Tensor<T>&);                           \
  template Tensor<T> apply(const Tensor<T>&, const DegradationConfig&);            \
  template Tensor<T> apply(const Tensor<T>&, const DegradationConfig&, Rng&);      \
  template Tensor<T> synthesize_hdr(const Tensor<T>&, double, double);

LPIE_INSTANTIATE(float)
LPIE_INSTANTIATE(double)

}  // namespace lpie::degrade

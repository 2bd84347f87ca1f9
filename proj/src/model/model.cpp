#include "lpie/model.hpp"

#include <cmath>
#include <sstream>

#include "lpie/rng.hpp"

namespace lpie::model {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string join(const std::array<std::size_t, 5>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

ConvLayer layer(std::string path, std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t groups,
                std::size_t scale, std::size_t applications = 1) {
  return {std::move(path), c_in, c_out, k, groups, true, scale, applications};
}

void append(std::vector<ConvLayer>& dst, std::vector<ConvLayer> src) {
  for (auto& l : src) dst.push_back(std::move(l));
}

std::vector<ConvLayer> ira_layers(const ModelConfig& cfg, const std::string& prefix, std::size_t c_in,
                                  std::size_t c_out, std::size_t scale) {
  std::vector<ConvLayer> out;
  append(out, inverted_residual_layers(cfg, prefix + ".ir1", c_in, c_out, scale));
  append(out, inverted_residual_layers(cfg, prefix + ".ir2", c_out, c_out, scale));
  const std::size_t hidden = c_out / cfg.channel_attention_reduction;
  out.push_back(layer(prefix + ".ca.fc1", c_out, hidden, 1, 1, 0, 2));
  out.push_back(layer(prefix + ".ca.fc2", hidden, c_out, 1, 1, 0, 2));
  out.push_back(layer(prefix + ".sa.conv", 2, 1, cfg.spatial_attention_kernel, 1, scale));
  return out;
}

}  // namespace

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.channels = {32, 64, 128, 64, 32};
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.channels = {4, 8, 16, 8, 4};
  return c;
}

std::size_t ModelConfig::hidden_width(std::size_t c_out) const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(c_out) * expansion_ratio));
}

void ModelConfig::validate() const {
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0) throw ConfigError("channels", "entry " + std::to_string(i) + " must be positive");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) throw ConfigError("kernel_size", "must be odd");
  if (spatial_attention_kernel == 0 || spatial_attention_kernel % 2 == 0) {
    throw ConfigError("spatial_attention_kernel", "must be odd");
  }
  if (!(expansion_ratio > 0) || !std::isfinite(expansion_ratio)) {
    throw ConfigError("expansion_ratio", "must be positive and finite");
  }
  if (channel_attention_reduction == 0) throw ConfigError("channel_attention_reduction", "must be positive");
  for (std::size_t c : channels) {
    if (c % channel_attention_reduction != 0) {
      throw ConfigError("channel_attention_reduction",
                        "channel width " + std::to_string(c) + " is not divisible by " +
                            std::to_string(channel_attention_reduction));
    }
    if (hidden_width(c) == 0) throw ConfigError("expansion_ratio", "expanded width rounds to zero");
  }
  if (!(clip_epsilon > 0 && clip_epsilon < 1)) throw ConfigError("clip_epsilon", "must lie in (0, 1)");
}

void ModelConfig::write(KeyValueText& kv, const std::string& prefix) const {
  kv.set(prefix + "channels", join(channels));
  kv.set(prefix + "kernel_size", static_cast<std::int64_t>(kernel_size));
  kv.set(prefix + "expansion_ratio", expansion_ratio);
  kv.set(prefix + "spatial_attention_kernel", static_cast<std::int64_t>(spatial_attention_kernel));
  kv.set(prefix + "channel_attention_reduction", static_cast<std::int64_t>(channel_attention_reduction));
  kv.set(prefix + "clip_epsilon", clip_epsilon);
  kv.set(prefix + "global_residual", global_residual);
}

ModelConfig ModelConfig::read(KeyValueText& kv, const std::string& prefix) {
  ModelConfig c;
  const auto positive = [&](const std::string& key, std::int64_t v) {
    if (v <= 0) throw ConfigError(prefix + key, "must be positive");
    return static_cast<std::size_t>(v);
  };
  std::vector<std::int64_t> defaults(c.channels.begin(), c.channels.end());
  const auto ch = kv.take_int_list(prefix + "channels", defaults);
  if (ch.size() != 5) throw ConfigError(prefix + "channels", "expected exactly 5 widths");
  for (std::size_t i = 0; i < 5; ++i) c.channels[i] = positive("channels", ch[i]);
  c.kernel_size = positive("kernel_size", kv.take_int(prefix + "kernel_size", 3));
  c.expansion_ratio = kv.take_double(prefix + "expansion_ratio", c.expansion_ratio);
  c.spatial_attention_kernel = positive("spatial_attention_kernel", kv.take_int(prefix + "spatial_attention_kernel", 7));
  c.channel_attention_reduction =
      positive("channel_attention_reduction", kv.take_int(prefix + "channel_attention_reduction", 4));
  c.clip_epsilon = kv.take_double(prefix + "clip_epsilon", c.clip_epsilon);
  c.global_residual = kv.take_bool(prefix + "global_residual", c.global_residual);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.key(), e.what());
  }
  return c;
}

std::vector<ConvLayer> inverted_residual_layers(const ModelConfig& cfg, const std::string& prefix, std::size_t c_in,
                                                std::size_t c_out, std::size_t scale) {
  const std::size_t h = cfg.hidden_width(c_out);
  return {layer(prefix + ".expand", c_in, h, 1, 1, scale),
          layer(prefix + ".depthwise", h, h, cfg.kernel_size, h, scale),
          layer(prefix + ".project", h, c_out, 1, 1, scale)};
}

std::vector<ConvLayer> conv_layers(const ModelConfig& cfg) {
  const auto& c = cfg.channels;
  std::vector<ConvLayer> out;
  out.push_back(layer("stem", 3, c[0], 3, 1, 1));
  append(out, ira_layers(cfg, "enc1", c[0], c[0], 1));
  append(out, ira_layers(cfg, "enc2", c[0], c[1], 2));
  append(out, ira_layers(cfg, "enc3", c[1], c[2], 4));
  append(out, ira_layers(cfg, "dec1", c[2], c[3], 4));
  append(out, ira_layers(cfg, "dec2", c[3] + c[1], c[4], 2));
  out.push_back(layer("head", c[4] + c[0], 3, 3, 1, 1));
  return out;
}

std::size_t param_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& l : conv_layers(config)) total += l.param_count();
  return total;
}

// ---- ParameterSet / BoundParams ---------------------------------------------

template <typename T>
void ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
const ad::Var<T>& BoundParams<T>::operator()(const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unbound parameter '" + name + "'");
  return it->second;
}

// ---- graph ----------------------------------------------------------------

namespace {

template <typename T>
ad::Var<T> conv(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& path, std::size_t groups,
                const GraphContext& ctx) {
  const auto& w = p(path + ".weight");
  ad::Var<T> y = ad::conv2d(x, w, std::optional<ad::Var<T>>(p(path + ".bias")),
                            kernels::ConvParams{1, kernels::Padding::zero_same, groups});
  if (ctx.observer != nullptr && *ctx.observer) (*ctx.observer)(path, x.shape(), w.shape(), groups, y.shape());
  return y;
}

}  // namespace

template <typename T>
ad::Var<T> inverted_residual(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix,
                             std::size_t c_out, const GraphContext& ctx) {
  const std::size_t hidden = ctx.config->hidden_width(c_out);
  ad::Var<T> h = ad::relu(conv(x, p, prefix + ".expand", 1, ctx));
  h = ad::relu(conv(h, p, prefix + ".depthwise", hidden, ctx));
  h = conv(h, p, prefix + ".project", 1, ctx);
  if (x.shape().c == c_out) h = ad::add(h, x);
  return h;
}

template <typename T>
ad::Var<T> channel_attention(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix,
                             const GraphContext& ctx) {
  if (x.shape().c % ctx.config->channel_attention_reduction != 0) {
    throw ShapeError("channel_attention: " + std::to_string(x.shape().c) + " channels not divisible by reduction " +
                     std::to_string(ctx.config->channel_attention_reduction));
  }
  const auto mlp = [&](const ad::Var<T>& v) {
    return conv(ad::relu(conv(v, p, prefix + ".fc1", 1, ctx)), p, prefix + ".fc2", 1, ctx);
  };
  ad::Var<T> a = ad::sigmoid(ad::add(mlp(ad::global_avg_pool(x)), mlp(ad::global_max_pool(x))));
  return ad::mul(x, a);
}

template <typename T>
ad::Var<T> spatial_attention(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix,
                             const GraphContext& ctx) {
  ad::Var<T> s = ad::concat_channels(ad::channel_mean(x), ad::channel_max(x));
  ad::Var<T> m = ad::sigmoid(conv(s, p, prefix + ".conv", 1, ctx));
  return ad::mul(x, m);
}

template <typename T>
ad::Var<T> ira_block(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix, std::size_t c_out,
                     const GraphContext& ctx) {
  ad::Var<T> h = inverted_residual(x, p, prefix + ".ir1", c_out, ctx);
  h = inverted_residual(h, p, prefix + ".ir2", c_out, ctx);
  h = channel_attention(h, p, prefix + ".ca", ctx);
  return spatial_attention(h, p, prefix + ".sa", ctx);
}

// ---- Model ------------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelConfig config, ParameterSet<T> params) : config_(config), params_(std::move(params)) {
  config_.validate();
  std::size_t expected = 0;
  for (const auto& l : conv_layers(config_)) {
    const Shape ws{l.c_out, l.c_in / l.groups, l.k, l.k};
    const Shape bs{1, l.c_out, 1, 1};
    for (const auto& [name, shape] : {std::pair{l.path + ".weight", ws}, std::pair{l.path + ".bias", bs}}) {
      if (!params_.contains(name)) throw ShapeError("missing parameter '" + name + "'");
      if (params_.at(name).shape() != shape) {
        throw ShapeError("parameter '" + name + "' has shape " + params_.at(name).shape().str() + ", expected " +
                         shape.str());
      }
      ++expected;
    }
  }
  if (params_.size() != expected) {
    throw ShapeError("parameter set holds " + std::to_string(params_.size()) + " tensors, expected " +
                     std::to_string(expected));
  }
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParameterSet<T> params;
  for (const auto& l : conv_layers(config)) {
    const Shape ws{l.c_out, l.c_in / l.groups, l.k, l.k};
    const double fan_in = static_cast<double>((l.c_in / l.groups) * l.k * l.k);
    const double bound = std::sqrt(6.0 / fan_in);
    Rng rng = Rng::derive(seed, {fnv1a(l.path)});
    Tensor<T> w(ws);
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    params.add(l.path + ".weight", std::move(w));
    params.add(l.path + ".bias", Tensor<T>(Shape{1, l.c_out, 1, 1}));
  }
  return Model(config, std::move(params));
}

template <typename T>
std::pair<BoundParams<T>, std::vector<ad::Var<T>>> Model<T>::bind(ad::Tape<T>& tape) const {
  BoundParams<T> bound;
  std::vector<ad::Var<T>> vars;
  vars.reserve(params_.size());
  for (const auto& e : params_.entries()) {
    ad::Var<T> v = tape.recording() ? tape.leaf(e.value, e.name) : tape.constant(e.value);
    bound.set(e.name, v);
    vars.push_back(std::move(v));
  }
  return {std::move(bound), std::move(vars)};
}

template <typename T>
ad::Var<T> Model<T>::forward(const ad::Var<T>& image, const BoundParams<T>& p, const ConvObserver* observer) const {
  const Shape& s = image.shape();
  if (s.c != 3) throw ShapeError("model input must have 3 channels, got " + std::to_string(s.c));
  if (s.h % 4 != 0 || s.w % 4 != 0) {
    throw ShapeError("model graph input " + s.str() + " needs height and width divisible by 4");
  }
  const GraphContext ctx{&config_, observer};
  const auto& c = config_.channels;
  ad::Var<T> x = ad::relu(conv(image, p, "stem", 1, ctx));
  ad::Var<T> s1 = ira_block(x, p, "enc1", c[0], ctx);
  ad::Var<T> s2 = ira_block(ad::maxpool2x2(s1), p, "enc2", c[1], ctx);
  ad::Var<T> b = ira_block(ad::maxpool2x2(s2), p, "enc3", c[2], ctx);
  ad::Var<T> d = ira_block(b, p, "dec1", c[3], ctx);
  d = ad::concat_channels(ad::upsample2x(d), s2);
  d = ira_block(d, p, "dec2", c[4], ctx);
  d = ad::concat_channels(ad::upsample2x(d), s1);
  ad::Var<T> out = conv(d, p, "head", 1, ctx);
  if (config_.global_residual) out = ad::add(out, image);
  return ad::clip(out, T(0), static_cast<T>(1.0 - config_.clip_epsilon));
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& image, const ConvObserver* observer) const {
  const Shape& s = image.shape();
  if (s.c != 3) throw ShapeError("model input must have 3 channels, got " + std::to_string(s.c));
  const std::size_t pad_h = (4 - s.h % 4) % 4;
  const std::size_t pad_w = (4 - s.w % 4) % 4;
  ad::Tape<T> tape(false);
  auto [bound, vars] = bind(tape);
  ad::Var<T> in = tape.constant(pad_h || pad_w ? reflect_pad_bottom_right(image, pad_h, pad_w) : image);
  Tensor<T> out = forward(in, bound, observer).value();
  if (pad_h || pad_w) return crop(out, 0, 0, s.h, s.w);
  return out;
}

template <typename T>
Tensor<T> self_ensemble(const Model<T>& model, const Tensor<T>& image) {
  Tensor<double> acc(image.shape());
  for (int t = 0; t < kDihedralCount; ++t) {
    const Tensor<T> y = inverse_dihedral(model.forward(dihedral(image, t)), t);
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += static_cast<double>(y[i]);
  }
  const double hi = 1.0 - model.config().clip_epsilon;
  Tensor<T> out(image.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(std::clamp(acc[i] / kDihedralCount, 0.0, hi));
  }
  return out;
}

#define LPIE_INSTANTIATE(T)                                                                                       \
  template class ParameterSet<T>;                                                                                 \
  template class BoundParams<T>;                                                                                  \
  template class Model<T>;                                                                                        \
  template ad::Var<T> inverted_residual(const ad::Var<T>&, const BoundParams<T>&, const std::string&, std::size_t, \
                                        const GraphContext&);                                                     \
  template ad::Var<T> channel_attention(const ad::Var<T>&, const BoundParams<T>&, const std::string&,             \
                                        const GraphContext&);                                                     \
  template ad::Var<T> spatial_attention(const ad::Var<T>&, const BoundParams<T>&, const std::string&,             \
                                        const GraphContext&);                                                     \
  template ad::Var<T> ira_block(const ad::Var<T>&, const BoundParams<T>&, const std::string&, std::size_t,         \
                                const GraphContext&);                                                             \
  template Tensor<T> self_ensemble(const Model<T>&, const Tensor<T>&);

LPIE_INSTANTIATE(float)
LPIE_INSTANTIATE(double)

}  // namespace lpie::model

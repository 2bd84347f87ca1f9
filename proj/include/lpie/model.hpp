#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lpie/autodiff.hpp"
#include "lpie/config_text.hpp"
#include "lpie/tensor.hpp"

namespace lpie::model {

// U-Net of inverted-residual-attention (IRA) blocks.
//
//   stem 3x3 conv + ReLU
//   enc1 IRA(c0)            full res   -> skip1, maxpool
//   enc2 IRA(c0 -> c1)      1/2 res    -> skip2, maxpool
//   enc3 IRA(c1 -> c2)      1/4 res    (bottleneck, no pooling)
//   dec1 IRA(c2 -> c3)      1/4 res    -> upsample, concat skip2
//   dec2 IRA(c3+c1 -> c4)   1/2 res    -> upsample, concat skip1
//   head 3x3 conv (c4+c0 -> 3), + input, clip to [0, 1 - clip_epsilon]
//
// IRA = inverted residual x2, channel attention, spatial attention.
struct ModelConfig {
  std::array<std::size_t, 5> channels{16, 32, 64, 32, 16};
  std::size_t kernel_size = 3;
  double expansion_ratio = 4.0;
  std::size_t spatial_attention_kernel = 7;
  std::size_t channel_attention_reduction = 4;
  double clip_epsilon = 1e-5;
  bool global_residual = true;

  static ModelConfig base() { return {}; }
  static ModelConfig large();
  static ModelConfig tiny();

  // Throws ConfigError on violated invariants.
  void validate() const;
  // Width of an inverted residual's expanded representation.
  std::size_t hidden_width(std::size_t c_out) const;

  void write(KeyValueText& kv, const std::string& prefix = "") const;
  static ModelConfig read(KeyValueText& kv, const std::string& prefix = "");
  bool operator==(const ModelConfig&) const = default;
};

// One convolution of the network, as needed for parameter/MAC accounting.
struct ConvLayer {
  std::string path;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 1;
  std::size_t groups = 1;
  bool bias = true;
  // Spatial resolution divisor relative to the input (1, 2 or 4); 0 marks
  // layers that act on globally pooled 1x1 features.
  std::size_t scale = 1;
  // How often the layer runs per forward pass (the channel-attention MLP is
  // shared by the average- and max-pooled branches).
  std::size_t applications = 1;

  std::size_t weight_count() const { return c_out * (c_in / groups) * k * k; }
  std::size_t param_count() const { return weight_count() + (bias ? c_out : 0); }
};

std::vector<ConvLayer> conv_layers(const ModelConfig& config);
std::vector<ConvLayer> inverted_residual_layers(const ModelConfig& config, const std::string& prefix,
                                                std::size_t c_in, std::size_t c_out, std::size_t scale);
std::size_t param_count(const ModelConfig& config);

// Named tensors in canonical layer order; each path appears once.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  void add(std::string name, Tensor<T> value);
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameter leaves bound to a tape, looked up by name inside the graph.
template <typename T>
class BoundParams {
 public:
  void set(const std::string& name, ad::Var<T> v) { vars_[name] = std::move(v); }
  const ad::Var<T>& operator()(const std::string& name) const;

 private:
  std::unordered_map<std::string, ad::Var<T>> vars_;
};

// Called once per convolution executed by the graph.
using ConvObserver = std::function<void(const std::string& path, const Shape& input, const Shape& weight,
                                        std::size_t groups, const Shape& output)>;

struct GraphContext {
  const ModelConfig* config = nullptr;
  const ConvObserver* observer = nullptr;
};

template <typename T>
ad::Var<T> inverted_residual(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix,
                             std::size_t c_out, const GraphContext& ctx);
template <typename T>
ad::Var<T> channel_attention(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix,
                             const GraphContext& ctx);
template <typename T>
ad::Var<T> spatial_attention(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix,
                             const GraphContext& ctx);
template <typename T>
ad::Var<T> ira_block(const ad::Var<T>& x, const BoundParams<T>& p, const std::string& prefix, std::size_t c_out,
                     const GraphContext& ctx);

template <typename T>
class Model {
 public:
  Model(ModelConfig config, ParameterSet<T> params);

  // Fan-in scaled uniform init U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero
  // biases. Each layer draws from its own stream derived from (seed, path).
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParameterSet<T>& params() const { return params_; }
  ParameterSet<T>& params() { return params_; }

  // Inference on n x 3 x h x w. Sizes not divisible by 4 are reflect-padded
  // on the bottom/right and the result cropped back.
  Tensor<T> forward(const Tensor<T>& image, const ConvObserver* observer = nullptr) const;

  // Differentiable graph; image h and w must be multiples of 4.
  ad::Var<T> forward(const ad::Var<T>& image, const BoundParams<T>& params, const ConvObserver* observer = nullptr) const;

  // Leaves for every parameter, in canonical order.
  std::pair<BoundParams<T>, std::vector<ad::Var<T>>> bind(ad::Tape<T>& tape) const;

  template <typename U>
  Model<U> cast() const {
    return Model<U>(config_, params_.template cast<U>());
  }

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
};

// Averages forward passes over the 8 dihedral transforms, each mapped back,
// then clips to the output range again.
template <typename T>
Tensor<T> self_ensemble(const Model<T>& model, const Tensor<T>& image);

}  // namespace lpie::model

#include "lpie/gradcheck_suite.hpp"

#include <functional>

#include "lpie/model.hpp"
#include "lpie/objectives.hpp"

namespace lpie::ad {

namespace {

using D = double;
using Graph = ScalarGraph<D>;

struct Case {
  std::string name;
  std::function<std::pair<Graph, std::vector<Tensor<D>>>(std::uint64_t seed)> make;
};

Tensor<D> rnd(const Shape& s, Rng& rng, double lo = 0.1, double hi = 0.9) { return uniform_tensor<D>(s, rng, lo, hi); }

// A single-op case: inputs drawn from `shapes`, output projected to a scalar.
Case unary_case(std::string name, std::vector<Shape> shapes, std::function<Var<D>(std::span<const Var<D>>)> op,
                double lo = 0.1, double hi = 0.9) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<Tensor<D>> inputs;
            for (const auto& s : shapes) inputs.push_back(rnd(s, rng, lo, hi));
            Graph g = [op, seed](Tape<D>&, std::span<const Var<D>> v) {
              return random_projection(op(v), seed ^ 0x5eedULL);
            };
            return std::pair{g, inputs};
          }};
}

// Model sub-graphs: input x plus the weight and bias of every listed layer.
Case model_case(std::string name, model::ModelConfig cfg, Shape input, std::vector<model::ConvLayer> layers,
                std::function<Var<D>(const Var<D>&, const model::BoundParams<D>&, const model::GraphContext&)> body,
                bool project = true) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<Tensor<D>> inputs{rnd(input, rng)};
            std::vector<std::string> names;
            for (const auto& l : layers) {
              const double bound = 1.0 / std::sqrt(static_cast<double>((l.c_in / l.groups) * l.k * l.k));
              inputs.push_back(rnd(Shape{l.c_out, l.c_in / l.groups, l.k, l.k}, rng, -bound, bound));
              inputs.push_back(rnd(Shape{1, l.c_out, 1, 1}, rng, -0.1, 0.1));
              names.push_back(l.path + ".weight");
              names.push_back(l.path + ".bias");
            }
            Graph g = [=](Tape<D>&, std::span<const Var<D>> v) {
              model::BoundParams<D> p;
              for (std::size_t i = 0; i < names.size(); ++i) p.set(names[i], v[i + 1]);
              const model::GraphContext ctx{&cfg, nullptr};
              Var<D> out = body(v[0], p, ctx);
              return project ? random_projection(out, seed ^ 0x5eedULL) : out;
            };
            return std::pair{g, inputs};
          }};
}

std::vector<model::ConvLayer> layers_under(const model::ModelConfig& cfg, const std::string& prefix) {
  std::vector<model::ConvLayer> out;
  for (auto& l : model::conv_layers(cfg)) {
    if (l.path.rfind(prefix, 0) == 0) out.push_back(l);
  }
  return out;
}

std::vector<Case> build_cases() {
  using kernels::ConvParams;
  using kernels::Padding;
  std::vector<Case> cases;
  cases.push_back(unary_case("conv2d", {{1, 2, 5, 5}, {4, 2, 3, 3}, {1, 4, 1, 1}},
                             [](auto v) { return conv2d(v[0], v[1], std::optional(v[2])); }));
  cases.push_back(unary_case("conv2d_stride2_valid", {{2, 3, 7, 6}, {2, 3, 3, 3}}, [](auto v) {
    return conv2d(v[0], v[1], std::optional<Var<D>>{}, ConvParams{2, Padding::valid, 1});
  }));
  cases.push_back(unary_case("conv2d_grouped", {{1, 4, 6, 6}, {6, 2, 5, 5}, {1, 6, 1, 1}}, [](auto v) {
    return conv2d(v[0], v[1], std::optional(v[2]), ConvParams{1, Padding::zero_same, 2});
  }));
  cases.push_back(unary_case("conv2d_depthwise", {{1, 3, 6, 5}, {3, 1, 3, 3}}, [](auto v) {
    return conv2d(v[0], v[1], std::optional<Var<D>>{}, ConvParams{1, Padding::zero_same, 3});
  }));
  cases.push_back(unary_case("maxpool2x2", {{2, 2, 6, 8}}, [](auto v) { return maxpool2x2(v[0]); }));
  cases.push_back(unary_case("upsample2x", {{1, 2, 3, 4}}, [](auto v) { return upsample2x(v[0]); }));
  cases.push_back(
      unary_case("concat_channels", {{1, 2, 4, 4}, {1, 3, 4, 4}}, [](auto v) { return concat_channels(v[0], v[1]); }));
  cases.push_back(unary_case("relu", {{1, 2, 5, 5}}, [](auto v) { return relu(v[0]); }, -1.0, 1.0));
  cases.push_back(unary_case("sigmoid", {{1, 2, 5, 5}}, [](auto v) { return sigmoid(v[0]); }, -4.0, 4.0));
  cases.push_back(unary_case("sigmoid_chain", {{1, 2, 4, 4}},
                             [](auto v) { return sigmoid(scalar_mul(sigmoid(sigmoid(v[0])), 3.0)); }, -3.0, 3.0));
  cases.push_back(unary_case("add_broadcast", {{2, 3, 4, 4}, {2, 3, 1, 1}}, [](auto v) { return add(v[0], v[1]); }));
  cases.push_back(unary_case("sub", {{1, 3, 4, 4}, {1, 1, 4, 4}}, [](auto v) { return sub(v[0], v[1]); }));
  cases.push_back(unary_case("mul_broadcast", {{2, 3, 4, 5}, {2, 1, 4, 5}}, [](auto v) { return mul(v[0], v[1]); }));
  cases.push_back(unary_case("mul_channel", {{1, 3, 4, 4}, {1, 3, 1, 1}}, [](auto v) { return mul(v[0], v[1]); }));
  cases.push_back(unary_case("scalar_mul", {{1, 2, 3, 3}}, [](auto v) { return scalar_mul(v[0], -1.7); }));
  cases.push_back(unary_case("global_avg_pool", {{2, 3, 4, 5}}, [](auto v) { return global_avg_pool(v[0]); }));
  cases.push_back(unary_case("global_max_pool", {{2, 3, 4, 5}}, [](auto v) { return global_max_pool(v[0]); }));
  cases.push_back(unary_case("channel_mean", {{2, 3, 4, 5}}, [](auto v) { return channel_mean(v[0]); }));
  cases.push_back(unary_case("channel_max", {{2, 3, 4, 5}}, [](auto v) { return channel_max(v[0]); }));
  cases.push_back(unary_case("clip", {{1, 2, 5, 5}}, [](auto v) { return clip(v[0], 0.3, 0.7); }));
  cases.push_back(unary_case("sum", {{1, 2, 3, 3}}, [](auto v) { return sum(v[0]); }));
  cases.push_back(unary_case("mean", {{1, 2, 3, 3}}, [](auto v) { return mean(v[0]); }));

  const model::ModelConfig tiny = model::ModelConfig::tiny();
  model::ModelConfig block_cfg = tiny;
  block_cfg.channels = {8, 8, 8, 8, 8};
  cases.push_back(model_case("inverted_residual", block_cfg, {1, 8, 8, 8},
                             model::inverted_residual_layers(block_cfg, "b.ir1", 8, 8, 1),
                             [](const auto& x, const auto& p, const auto& ctx) {
                               return model::inverted_residual<D>(x, p, "b.ir1", 8, ctx);
                             }));
  cases.push_back(model_case("inverted_residual_widen", block_cfg, {1, 4, 8, 8},
                             model::inverted_residual_layers(block_cfg, "b.ir1", 4, 8, 1),
                             [](const auto& x, const auto& p, const auto& ctx) {
                               return model::inverted_residual<D>(x, p, "b.ir1", 8, ctx);
                             }));
  const auto enc1 = layers_under(block_cfg, "enc1.");
  std::vector<model::ConvLayer> ca, sa;
  for (const auto& l : enc1) {
    if (l.path.find(".ca.") != std::string::npos) ca.push_back(l);
    if (l.path.find(".sa.") != std::string::npos) sa.push_back(l);
  }
  cases.push_back(model_case("channel_attention", block_cfg, {2, 8, 6, 6}, ca,
                             [](const auto& x, const auto& p, const auto& ctx) {
                               return model::channel_attention<D>(x, p, "enc1.ca", ctx);
                             }));
  cases.push_back(model_case("spatial_attention", block_cfg, {1, 8, 8, 8}, sa,
                             [](const auto& x, const auto& p, const auto& ctx) {
                               return model::spatial_attention<D>(x, p, "enc1.sa", ctx);
                             }));
  cases.push_back(model_case("ira_block", block_cfg, {1, 8, 8, 8}, enc1,
                             [](const auto& x, const auto& p, const auto& ctx) {
                               return model::ira_block<D>(x, p, "enc1", 8, ctx);
                             }));

  const auto loss_case = [](std::string name, std::function<Var<D>(const Var<D>&, const Var<D>&)> f) {
    return Case{name, [f](std::uint64_t seed) {
                  Rng rng(seed);
                  std::vector<Tensor<D>> inputs{rnd({1, 2, 16, 16}, rng), rnd({1, 2, 16, 16}, rng)};
                  Graph g = [f](Tape<D>&, std::span<const Var<D>> v) { return f(v[0], v[1]); };
                  return std::pair{g, inputs};
                }};
  };
  cases.push_back(loss_case("l1_loss", [](const auto& a, const auto& b) { return objectives::l1_loss(a, b); }));
  cases.push_back(loss_case("ssim_loss", [](const auto& a, const auto& b) { return objectives::ssim_loss(a, b); }));
  cases.push_back(
      loss_case("gradient_loss", [](const auto& a, const auto& b) { return objectives::gradient_loss(a, b); }));
  cases.push_back(loss_case("gradient_loss_sobel", [](const auto& a, const auto& b) {
    return objectives::gradient_loss(a, b, objectives::GradientOperator::sobel);
  }));
  cases.push_back(
      loss_case("combined_loss", [](const auto& a, const auto& b) { return objectives::combined_loss(a, b); }));

  cases.push_back({"tiny_model", [tiny](std::uint64_t seed) {
                     const auto m = model::Model<D>::build(tiny, seed);
                     Rng rng(seed);
                     std::vector<Tensor<D>> inputs{rnd({1, 3, 16, 16}, rng)};
                     std::vector<std::string> names;
                     for (const auto& e : m.params().entries()) {
                       inputs.push_back(e.value);
                       names.push_back(e.name);
                     }
                     Graph g = [m, names, seed](Tape<D>&, std::span<const Var<D>> v) {
                       model::BoundParams<D> p;
                       for (std::size_t i = 0; i < names.size(); ++i) p.set(names[i], v[i + 1]);
                       return random_projection(m.forward(v[0], p), seed ^ 0x5eedULL);
                     };
                     return std::pair{g, inputs};
                   }});
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_suite_names() {
  std::vector<std::string> out;
  for (const auto& c : build_cases()) out.push_back(c.name);
  return out;
}

std::vector<SuiteCase> run_gradcheck_suite(std::size_t seeds, const GradcheckOptions& base) {
  std::vector<SuiteCase> out;
  for (const auto& c : build_cases()) {
    SuiteCase r;
    r.name = c.name;
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t seed = base.seed + 1000 * (s + 1);
      auto [graph, inputs] = c.make(seed);
      GradcheckOptions opt = base;
      opt.seed = seed;
      const GradcheckReport rep = gradcheck<D>(graph, inputs, opt);
      r.checked += rep.checked;
      r.skipped += rep.skipped;
      if (rep.max_relative_error >= r.max_relative_error) {
        r.max_relative_error = rep.max_relative_error;
        r.worst = "seed " + std::to_string(seed) + " " + rep.worst;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lpie::ad

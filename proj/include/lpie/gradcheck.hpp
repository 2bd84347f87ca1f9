#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lpie/autodiff.hpp"
#include "lpie/rng.hpp"
#include "lpie/tensor.hpp"

namespace lpie {

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi);

namespace ad {

// Builds a scalar graph from the given input leaves.
template <typename T>
using ScalarGraph = std::function<Var<T>(Tape<T>&, std::span<const Var<T>>)>;

struct GradcheckOptions {
  double eps = 1e-5;
  // Coordinates checked per input; inputs with fewer elements are checked exhaustively.
  std::size_t max_coords_per_input = 48;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/-eps evaluation changed a ReLU/pool/clip/abs branch.
  std::size_t skipped = 0;
  std::string worst;  // "input[i] coord j: analytic=... numeric=..."
};

// Compares tape gradients against central differences. Relative error per
// coordinate is |a - n| / max(|a|, |n|, 1e-8); the report holds the maximum.
template <typename T>
GradcheckReport gradcheck(const ScalarGraph<T>& graph, const std::vector<Tensor<T>>& inputs,
                          const GradcheckOptions& options = {});

// sum(x * r) for a fixed random r in [-1, 1]: turns any op output into a
// scalar whose gradient exercises every output element.
template <typename T>
Var<T> random_projection(const Var<T>& x, std::uint64_t seed);

}  // namespace ad
}  // namespace lpie

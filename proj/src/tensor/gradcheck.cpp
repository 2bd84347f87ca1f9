#include "lpie/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lpie {

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template Tensor<float> uniform_tensor(const Shape&, Rng&, double, double);
template Tensor<double> uniform_tensor(const Shape&, Rng&, double, double);

namespace ad {

namespace {

template <typename T>
struct Evaluation {
  double value;
  std::uint64_t branches;
};

template <typename T>
Evaluation<T> evaluate(const ScalarGraph<T>& graph, const std::vector<Tensor<T>>& inputs) {
  Tape<T> tape(false);
  tape.set_branch_logging(true);
  std::vector<Var<T>> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.constant(in));
  Var<T> out = graph(tape, vars);
  return {static_cast<double>(out.value()[0]), tape.branch_hash()};
}

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t max, Rng& rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (numel <= max) return idx;
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(max);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

template <typename T>
GradcheckReport gradcheck(const ScalarGraph<T>& graph, const std::vector<Tensor<T>>& inputs,
                          const GradcheckOptions& options) {
  if (!(options.eps > 0)) throw std::invalid_argument("gradcheck: eps must be positive");
  Tape<T> tape(true);
  tape.set_branch_logging(true);
  std::vector<Var<T>> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(inputs[i], "input" + std::to_string(i)));
  Var<T> root = graph(tape, leaves);
  const std::uint64_t base_branches = tape.branch_hash();
  tape.backward(root);

  GradcheckReport report;
  Rng rng(Rng::mix(options.seed, 0x67726164ULL));
  std::vector<Tensor<T>> work = inputs;
  const T eps = static_cast<T>(options.eps);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<T> analytic = leaves[i].grad();
    for (std::size_t j : pick_coords(inputs[i].numel(), options.max_coords_per_input, rng)) {
      const T orig = work[i][j];
      work[i][j] = orig + eps;
      const auto plus = evaluate(graph, work);
      work[i][j] = orig - eps;
      const auto minus = evaluate(graph, work);
      work[i][j] = orig;
      if (plus.branches != base_branches || minus.branches != base_branches) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[j]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel >= report.max_relative_error || report.worst.empty()) {
        report.max_relative_error = std::max(report.max_relative_error, rel);
        std::ostringstream os;
        os << "input[" << i << "] coord " << j << ": analytic=" << a << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

template <typename T>
Var<T> random_projection(const Var<T>& x, std::uint64_t seed) {
  Rng rng(seed);
  Var<T> r = x.tape().constant(uniform_tensor<T>(x.shape(), rng, -1.0, 1.0));
  return sum(mul(x, r));
}

template GradcheckReport gradcheck(const ScalarGraph<float>&, const std::vector<Tensor<float>>&, const GradcheckOptions&);
template GradcheckReport gradcheck(const ScalarGraph<double>&, const std::vector<Tensor<double>>&,
                                   const GradcheckOptions&);
template Var<float> random_projection(const Var<float>&, std::uint64_t);
template Var<double> random_projection(const Var<double>&, std::uint64_t);

}  // namespace ad
}  // namespace lpie

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpie/gradcheck.hpp"

namespace lpie::ad {

struct SuiteCase {
  std::string name;
  double max_relative_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;
};

// Finite-difference checks at 64-bit precision over every differentiable op,
// the model blocks, the losses and the full tiny model (16x16 input), each
// repeated for `seeds` seeds. Results hold the maximum error over seeds.
//
// The default step is 1e-3: with O(1) outputs, double roundoff in a central
// difference is ~1e-16/eps absolute, which at eps=1e-5 already exceeds the
// 1e-8 floor times 1e-4 on near-zero gradients.
inline GradcheckOptions suite_defaults() {
  GradcheckOptions o;
  o.eps = 1e-3;
  return o;
}
std::vector<SuiteCase> run_gradcheck_suite(std::size_t seeds = 5, const GradcheckOptions& base = suite_defaults());

std::vector<std::string> gradcheck_suite_names();

}  // namespace lpie::ad

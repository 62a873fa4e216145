#pragma once

#include <string>
#include <vector>

namespace dd::train {

struct GradCaseResult {
  std::string name;
  double max_rel_error = 0;
  std::size_t coordinates = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Finite-difference checks of every differentiable op and of each model's
// full episode loss on tiny shapes.
std::vector<GradCaseResult> run_gradient_suite();

}  // namespace dd::train

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "drilldown/params.hpp"
#include "drilldown/tape.hpp"

namespace dd::grad {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  GradMap first_moment;
  GradMap second_moment;
  std::int64_t step = 0;
};

// Bias-corrected Adam. Parameters without an entry in grads are left alone.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& state);

double global_norm(const GradMap& grads);

// Rescales every gradient by max_norm / g when the global norm g exceeds
// max_norm. Returns the norm before clipping.
double clip_global_norm(GradMap& grads, double max_norm);

using LossFn = std::function<Var(Tape&, const ParamStore&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Compares reverse-mode gradients with central differences over every
// coordinate of every parameter the loss binds.
GradCheckReport grad_check(const LossFn& loss, const ParamStore& params, double h = 1e-5);

}  // namespace dd::grad

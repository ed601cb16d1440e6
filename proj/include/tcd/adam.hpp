#pragma once

#include <cstdint>
#include <vector>

#include "tcd/autodiff.hpp"

namespace tcd {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments per parameter plus the step counter.
struct OptimizerState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(const ParameterStore& params, AdamConfig cfg);
};

/// One bias-corrected Adam update of every parameter in `params`.
void adam_step(ParameterStore& params, const Gradients& grads, OptimizerState& state);

}  // namespace tcd

#include "tcd/adam.hpp"

#include <cmath>

namespace tcd {

OptimizerState::OptimizerState(const ParameterStore& params, AdamConfig cfg) : config(cfg) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    first_moment.push_back(Tensor::zeros_like(params.value(i)));
    second_moment.push_back(Tensor::zeros_like(params.value(i)));
  }
}

void adam_step(ParameterStore& params, const Gradients& grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.value(i).same_shape(grads[i]) || !params.value(i).same_shape(state.first_moment[i])) {
      throw ShapeError("adam_step: shape mismatch for parameter '" + params.name(i) + "'");
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.value(i);
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace tcd

#include <cmath>
#include <random>

#include "tcd/datasets.hpp"

namespace tcd {

void Lorenz96Config::validate() const {
  if (variables < 4) throw ValidationError("Lorenz-96 needs at least 4 variables");
  if (!(dt > 0.0)) throw ValidationError("integration step must be positive");
  if (samples == 0 || subsample == 0) throw ValidationError("samples and subsample must be positive");
}

std::vector<double> lorenz96_derivative(std::span<const double> x, double forcing) {
  const std::size_t n = x.size();
  std::vector<double> dx(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double next = x[(i + 1) % n];
    const double prev = x[(i + n - 1) % n];
    const double prev2 = x[(i + n - 2) % n];
    dx[i] = (next - prev2) * prev - x[i] + forcing;
  }
  return dx;
}

void lorenz96_rk4_step(std::vector<double>& x, double forcing, double dt) {
  const std::size_t n = x.size();
  std::vector<double> tmp(n);
  const auto k1 = lorenz96_derivative(x, forcing);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  const auto k2 = lorenz96_derivative(tmp, forcing);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  const auto k3 = lorenz96_derivative(tmp, forcing);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
  const auto k4 = lorenz96_derivative(tmp, forcing);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
}

GeneratedData simulate_lorenz96(const Lorenz96Config& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  double forcing = 0.0;
  if (config.forcing) {
    forcing = *config.forcing;
  } else {
    forcing = std::uniform_real_distribution<double>(30.0, 40.0)(rng);
  }
  const std::size_t n = config.variables;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n, forcing);
  for (double& v : x) v += config.perturbation * gauss(rng);

  auto step = [&](std::size_t index) {
    lorenz96_rk4_step(x, forcing, config.dt);
    for (double v : x) {
      if (!std::isfinite(v) || std::abs(v) > 1e6) {
        throw SimulationError("Lorenz-96 diverged at integration step " + std::to_string(index) +
                              " (F=" + std::to_string(forcing) + ", dt=" + std::to_string(config.dt) + ")");
      }
    }
  };

  std::size_t counter = 0;
  for (std::size_t s = 0; s < config.warmup; ++s) step(counter++);
  std::vector<std::vector<double>> series(n, std::vector<double>(config.samples));
  for (std::size_t t = 0; t < config.samples; ++t) {
    for (std::size_t k = 0; k < config.subsample; ++k) step(counter++);
    for (std::size_t i = 0; i < n; ++i) series[i][t] = x[i];
  }

  std::vector<VariableSpec> specs;
  for (std::size_t i = 0; i < n; ++i) specs.push_back({"X" + std::to_string(i + 1), VariableKind::SeriesNumerical});
  GroundTruth truth;
  auto name = [&](std::size_t i) { return "X" + std::to_string(i % n + 1); };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t cause : {i + n - 2, i + n - 1, i + 1, i}) {
      truth.edges.push_back({name(cause), name(i), 1});
    }
  }
  truth.manifest = {{"generator", "lorenz96"},
                    {"variables", n},
                    {"forcing", forcing},
                    {"dt", config.dt},
                    {"subsample", config.subsample},
                    {"warmup_steps", config.warmup},
                    {"samples", config.samples},
                    {"perturbation", config.perturbation},
                    {"integrator", "rk4"},
                    {"seed", config.seed}};
  return {Dataset(std::move(specs), std::move(series)), std::move(truth)};
}

}  // namespace tcd

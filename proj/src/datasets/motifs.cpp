#include <cmath>
#include <random>

#include "tcd/datasets.hpp"

namespace tcd {

std::string_view to_string(Motif motif) {
  switch (motif) {
    case Motif::Fork: return "fork";
    case Motif::VStructure: return "v-structure";
    case Motif::Mediator: return "mediator";
    case Motif::Diamond: return "diamond";
  }
  return "unknown";
}

Motif parse_motif(std::string_view text) {
  if (text == "fork") return Motif::Fork;
  if (text == "v-structure") return Motif::VStructure;
  if (text == "mediator") return Motif::Mediator;
  if (text == "diamond") return Motif::Diamond;
  throw ValidationError("unknown motif '" + std::string(text) + "'");
}

std::string_view to_string(EdgeFunction f) {
  switch (f) {
    case EdgeFunction::Linear: return "linear";
    case EdgeFunction::Tanh: return "tanh";
    case EdgeFunction::Quadratic: return "quadratic";
  }
  return "unknown";
}

std::vector<std::pair<int, int>> motif_edges(Motif motif) {
  switch (motif) {
    case Motif::Fork: return {{1, 2}, {1, 3}};
    case Motif::VStructure: return {{1, 3}, {2, 3}};
    case Motif::Mediator: return {{1, 2}, {2, 3}, {1, 3}};
    case Motif::Diamond: return {{1, 2}, {1, 3}, {2, 4}, {3, 4}};
  }
  return {};
}

int motif_variable_count(Motif motif) { return motif == Motif::Diamond ? 4 : 3; }

void MotifConfig::validate() const {
  if (min_lag < 1 || max_lag < min_lag) throw ValidationError("motif lag range must satisfy 1 <= min <= max");
  if (length < 2 * static_cast<std::size_t>(max_lag)) {
    throw ValidationError("motif length must be at least twice the maximum lag");
  }
  if (noise_std < 0.0) throw ValidationError("noise standard deviation must be non-negative");
  if (min_coefficient > max_coefficient) throw ValidationError("coefficient range is empty");
}

double apply_edge_function(EdgeFunction f, double coefficient, double x) {
  switch (f) {
    case EdgeFunction::Linear: return coefficient * x;
    case EdgeFunction::Tanh: return coefficient * std::tanh(x);
    case EdgeFunction::Quadratic: return coefficient * x * x;
  }
  return 0.0;
}

std::vector<MotifEdge> sample_motif_edges(const MotifConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> lag(config.min_lag, config.max_lag);
  std::uniform_real_distribution<double> coef(config.min_coefficient, config.max_coefficient);
  std::uniform_int_distribution<int> family(0, 2);
  std::bernoulli_distribution negative(0.5);
  std::vector<MotifEdge> edges;
  for (auto [cause, effect] : motif_edges(config.kind)) {
    MotifEdge e;
    e.cause = cause;
    e.effect = effect;
    e.lag = lag(rng);
    e.coefficient = coef(rng);
    if (config.random_sign && negative(rng)) e.coefficient = -e.coefficient;
    const int fam = family(rng);
    e.function = config.function ? *config.function : static_cast<EdgeFunction>(fam);
    edges.push_back(e);
  }
  return edges;
}

GeneratedData gen_motif(const MotifConfig& config) {
  const auto edges = sample_motif_edges(config);
  const int n = motif_variable_count(config.kind);
  // Separate stream for the series so edge sampling is independent of length.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t burn_in = 4 * static_cast<std::size_t>(config.max_lag);
  const std::size_t total = config.length + burn_in;

  std::vector<bool> is_root(n + 1, true);
  for (const auto& e : edges) is_root[e.effect] = false;

  std::vector<std::vector<double>> x(n + 1, std::vector<double>(total, 0.0));
  for (std::size_t t = 0; t < total; ++t) {
    // Variables are topologically ordered by index in every motif.
    for (int v = 1; v <= n; ++v) {
      if (is_root[v]) {
        x[v][t] = gauss(rng);
        continue;
      }
      double value = 0.0;
      for (const auto& e : edges) {
        if (e.effect != v) continue;
        const auto lag = static_cast<std::size_t>(e.lag);
        const double parent = t >= lag ? x[e.cause][t - lag] : 0.0;
        value += apply_edge_function(e.function, e.coefficient, parent);
      }
      const double noise = gauss(rng);
      x[v][t] = value + config.noise_std * noise;
    }
  }

  std::vector<VariableSpec> specs;
  std::vector<std::vector<double>> values;
  for (int v = 1; v <= n; ++v) {
    specs.push_back({"V" + std::to_string(v), VariableKind::SeriesNumerical});
    values.emplace_back(x[v].begin() + static_cast<std::ptrdiff_t>(burn_in), x[v].end());
  }

  GroundTruth truth;
  nlohmann::json manifest;
  manifest["generator"] = "motif";
  manifest["kind"] = std::string(to_string(config.kind));
  manifest["seed"] = config.seed;
  manifest["length"] = config.length;
  manifest["noise_std"] = config.noise_std;
  manifest["lag_range"] = {config.min_lag, config.max_lag};
  manifest["coefficient_range"] = {config.min_coefficient, config.max_coefficient};
  manifest["random_sign"] = config.random_sign;
  manifest["root_process"] = "iid standard normal";
  manifest["edges"] = nlohmann::json::array();
  for (const auto& e : edges) {
    truth.edges.push_back({"V" + std::to_string(e.cause), "V" + std::to_string(e.effect), e.lag});
    manifest["edges"].push_back({{"from", "V" + std::to_string(e.cause)},
                                 {"to", "V" + std::to_string(e.effect)},
                                 {"lag", e.lag},
                                 {"coefficient", e.coefficient},
                                 {"function", std::string(to_string(e.function))}});
  }
  truth.manifest = std::move(manifest);
  return {Dataset(std::move(specs), std::move(values)), std::move(truth)};
}

}  // namespace tcd

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/data.hpp"
#include "tcd/forecaster.hpp"

namespace tcd {

/// How per-example finite differences are combined. Signed averaging
/// cancels even-order effects (a quadratic link has a gradient whose sign
/// follows the cause), so the mean magnitude is the default.
enum class Aggregation { MeanAbsolute, Signed };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view text);

/// Anything that maps normalized windows to raw outputs; see Predictions.
struct BlackBox {
  std::vector<VariableSpec> specs;
  std::size_t window = 0;
  std::function<Predictions(std::span<const WindowedExample>)> predict;
};

BlackBox black_box(const Forecaster& model);

/// Sensitivities of one target: rows are window positions (1 = oldest),
/// columns are source variables.
struct GradientMatrix {
  std::string target;
  std::vector<std::string> sources;
  std::vector<bool> static_source;
  Tensor values;  // [S, N]

  std::size_t positions() const { return values.rows(); }
  double at(std::size_t s, std::size_t i) const { return values.at(s, i); }
};

/// One matrix per target, averaged over `examples`.
std::vector<GradientMatrix> finite_diff_gradients(const BlackBox& model,
                                                  std::span<const WindowedExample> examples,
                                                  double epsilon,
                                                  Aggregation aggregation = Aggregation::MeanAbsolute);

struct CausalScores {
  GradientMatrix normalized;
  double scale = 0.0;  // max |entry| of the raw matrix
  bool degenerate = false;
};

CausalScores normalize_scores(const GradientMatrix& grad);

struct CausalEdge {
  std::string cause;
  std::string effect;
  double score = 0.0;
  std::optional<int> lag;  // none for static causes
  friend bool operator==(const CausalEdge&, const CausalEdge&) = default;
};

struct CausalGraph {
  std::vector<std::string> nodes;
  std::vector<CausalEdge> edges;
  double tau = 0.0;
  double epsilon = 0.0;

  bool contains(const std::string& cause, const std::string& effect) const;
  const CausalEdge* find(const std::string& cause, const std::string& effect) const;
  nlohmann::json to_json() const;
  static CausalGraph from_json(const nlohmann::json& j);
  friend bool operator==(const CausalGraph&, const CausalGraph&) = default;
};

/// Edge X_i -> Y_j iff max_s |score(s, i)| >= tau and is positive. The lag
/// is S - s* + 1 for the arg-max position s* (ties go to the larger s).
/// Pairs listed in `exclusions` are never emitted.
CausalGraph build_graph(std::span<const CausalScores> scores, std::vector<std::string> nodes,
                        double tau, double epsilon, std::span<const Exclusion> exclusions = {});

struct ExtractionConfig {
  double epsilon = 0.05;
  double tau = 0.15;
  Aggregation aggregation = Aggregation::MeanAbsolute;

  void validate() const;
  nlohmann::json to_json() const;
  static ExtractionConfig from_json(const nlohmann::json& j);
};

struct Extraction {
  std::vector<GradientMatrix> gradients;
  std::vector<CausalScores> scores;
  CausalGraph graph;
};

/// Full pipeline against a trained forecaster over its training windows.
Extraction extract(const Forecaster& model, const Dataset& dataset, const ExtractionConfig& config);
Extraction extract(const BlackBox& model, std::span<const WindowedExample> examples,
                   const ExtractionConfig& config, std::span<const Exclusion> exclusions = {});

/// Heat-map payload: rows = positions, columns = sources.
nlohmann::json gradient_json(const GradientMatrix& raw, const CausalScores& scores);

}  // namespace tcd

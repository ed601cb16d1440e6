#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/datasets.hpp"
#include "tcd/extractor.hpp"

namespace tcd {

struct EdgeCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  friend bool operator==(const EdgeCounts&, const EdgeCounts&) = default;
};

struct EdgeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  EdgeCounts counts;
};

/// Exact directed (cause, effect) matching; lags are ignored. Throws
/// ValidationError when a truth edge names a node absent from the graph.
EdgeScore f1_edges(const CausalGraph& predicted, const GroundTruth& truth);

struct LagScore {
  std::optional<double> pod;  // exact-match fraction; none without lagged true positives
  std::optional<double> mae;  // mean |predicted - true| over the same edges
  std::size_t lagged_true_positives = 0;
  std::size_t exact = 0;
};

LagScore pod_score(const CausalGraph& predicted, const GroundTruth& truth);

struct RunMetrics {
  EdgeScore edges;
  LagScore lags;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

Summary summarize(std::span<const double> values);

struct EvalReport {
  std::vector<RunMetrics> runs;
  Summary precision, recall, f1;
  Summary pod;  // over runs with a defined PoD
  Summary lag_mae;

  nlohmann::json to_json() const;
};

struct RunPair {
  CausalGraph predicted;
  GroundTruth truth;
};

EvalReport evaluate_run(std::span<const RunPair> runs);

/// Two aligned tables (F1, then PoD), one row per dataset, mean±std cells.
std::string format_tables(std::span<const std::pair<std::string, EvalReport>> rows);

}  // namespace tcd

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/data.hpp"

namespace tcd {

struct TruthEdge {
  std::string cause;
  std::string effect;
  std::optional<int> lag;  // set iff the cause is a time-series variable
  friend bool operator==(const TruthEdge&, const TruthEdge&) = default;
};

struct GroundTruth {
  std::vector<TruthEdge> edges;
  nlohmann::json manifest;  // generator parameters, recorded for reproducibility

  bool contains(const std::string& cause, const std::string& effect) const;
};

void save_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_truth(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Basic structure motifs

enum class Motif { Fork, VStructure, Mediator, Diamond };
enum class EdgeFunction { Linear, Tanh, Quadratic };

std::string_view to_string(Motif motif);
Motif parse_motif(std::string_view text);
std::string_view to_string(EdgeFunction f);

/// 1-based (cause, effect) pairs of a motif.
std::vector<std::pair<int, int>> motif_edges(Motif motif);
int motif_variable_count(Motif motif);

struct MotifConfig {
  Motif kind = Motif::Fork;
  std::uint64_t seed = 0;
  std::size_t length = 1000;
  double noise_std = 0.1;
  int min_lag = 1;
  int max_lag = 4;
  double min_coefficient = 0.5;
  double max_coefficient = 1.5;
  bool random_sign = true;
  std::optional<EdgeFunction> function;  // unset: drawn per edge

  void validate() const;
};

struct MotifEdge {
  int cause = 0;  // 1-based
  int effect = 0;
  int lag = 1;
  double coefficient = 1.0;
  EdgeFunction function = EdgeFunction::Linear;
};

double apply_edge_function(EdgeFunction f, double coefficient, double x);

struct GeneratedData {
  Dataset dataset;
  GroundTruth truth;
};

/// Root variables are i.i.d. standard normal; every other variable is the sum
/// of its edge functions applied to lagged parents plus Gaussian noise.
GeneratedData gen_motif(const MotifConfig& config);
std::vector<MotifEdge> sample_motif_edges(const MotifConfig& config);

// ---------------------------------------------------------------------------
// Lorenz-96

struct Lorenz96Config {
  std::size_t variables = 10;
  std::optional<double> forcing;  // unset: uniform in [30, 40] from the seed
  double dt = 0.01;
  std::size_t samples = 1000;
  std::size_t subsample = 5;
  std::size_t warmup = 1000;
  double perturbation = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

/// dX_i/dt = (X_{i+1} - X_{i-2}) X_{i-1} - X_i + F, cyclic indices.
std::vector<double> lorenz96_derivative(std::span<const double> x, double forcing);
void lorenz96_rk4_step(std::vector<double>& x, double forcing, double dt);

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

GeneratedData simulate_lorenz96(const Lorenz96Config& config);

// ---------------------------------------------------------------------------
// NetSim export loader

struct NetSimSubject {
  Dataset dataset;
  GroundTruth truth;
};

struct NetSimData {
  std::vector<NetSimSubject> subjects;
  std::vector<std::string> warnings;
};

/// Reads `subject_<k>.csv` files plus `network.json` from `dir`.
NetSimData load_netsim(const std::filesystem::path& dir);

/// Writes dataset, schema and truth.json into `dir`.
void save_generated(const GeneratedData& data, const std::filesystem::path& dir);

}  // namespace tcd

#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/datasets.hpp"
#include "tcd/evaluation.hpp"
#include "tcd/extractor.hpp"
#include "tcd/forecaster.hpp"

namespace tcd {

// ---------------------------------------------------------------------------
// Prior knowledge

struct Provenance {
  std::string user;
  std::string file;
  std::size_t iteration = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct PriorEntry {
  Exclusion link;
  Provenance provenance;
  friend bool operator==(const PriorEntry&, const PriorEntry&) = default;
};

class PriorKnowledge {
 public:
  /// Throws ValidationError on a duplicate link.
  void add(Exclusion link, Provenance provenance);
  bool contains(const Exclusion& link) const;
  std::vector<Exclusion> exclusions() const;
  const std::vector<PriorEntry>& entries() const noexcept { return entries_; }
  std::size_t max_iteration() const;

  /// Every cause must be a source and every effect a target of `specs`.
  void validate(std::span<const VariableSpec> specs) const;

  nlohmann::json to_json() const;
  static PriorKnowledge from_json(const nlohmann::json& j);
  friend bool operator==(const PriorKnowledge&, const PriorKnowledge&) = default;

 private:
  std::vector<PriorEntry> entries_;
};

// ---------------------------------------------------------------------------
// Dataset references
//
//   {"kind": "motif", "motif": "fork", "seed": 1, "length": 1000}
//   {"kind": "lorenz96", "seed": 1, "forcing": 30, "variables": 10}
//   {"kind": "directory", "path": "..."}      data.csv, schema.json, optional truth.json
//   {"kind": "netsim", "path": "...", "subject": 0}

struct ResolvedDataset {
  Dataset dataset;
  std::optional<GroundTruth> truth;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Syntax check only; throws ValidationError.
void validate_dataset_ref(const nlohmann::json& ref);
/// Throws DatasetError when the data cannot be produced or read.
ResolvedDataset resolve_dataset(const nlohmann::json& ref);

// ---------------------------------------------------------------------------
// Runs

struct RunRequest {
  nlohmann::json dataset;
  ModelConfig model;
  ExtractionConfig extraction;
  PriorKnowledge prior;

  void validate() const;
  nlohmann::json to_json() const;
  /// Accepts {"dataset", "model"?, "extraction"?, "exclusions"?, "user"?}.
  static RunRequest from_json(const nlohmann::json& j);
};

struct StageError {
  std::string stage;  // dataset, prior, train, extract, evaluate, persist
  std::string message;
};

struct RunRecord {
  std::string id;
  std::optional<std::string> parent;
  nlohmann::json dataset;
  ModelConfig model;
  ExtractionConfig extraction;
  PriorKnowledge prior;
  std::optional<std::string> checkpoint;  // relative to the run directory
  std::optional<CausalGraph> graph;
  std::optional<nlohmann::json> evaluation;
  std::optional<TrainingTelemetry> telemetry;
  std::optional<StageError> error;
  std::string created;
  std::string finished;

  bool ok() const { return !error.has_value(); }
  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat on-disk state:
///   runs/<id>/record.json, checkpoint.bin, graph.json, gradients.json, dataset/
///   jobs/<id>.json
/// Records are written once (temp file + rename) and never edited.
class StateStore {
 public:
  /// Creates the layout if absent; throws StateError on anything unreadable.
  explicit StateStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path run_dir(const std::string& id) const;
  std::filesystem::path job_path(const std::string& id) const;

  std::string allocate_run_id();
  std::string allocate_job_id();

  bool has_run(const std::string& id) const;
  RunRecord load_run(const std::string& id) const;  // NotFound
  std::vector<std::string> run_ids() const;
  void save_run(const RunRecord& record);

  /// Raw stored files, served as-is.
  std::string read_graph(const std::string& id) const;
  nlohmann::json read_gradients(const std::string& id) const;

  std::vector<nlohmann::json> load_jobs() const;
  void save_job(const nlohmann::json& job);

 private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::size_t next_run_ = 1;
  std::size_t next_job_ = 1;
};

void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);
std::string utc_timestamp();

/// train -> extract -> evaluate (when truth exists) -> persist. Failures are
/// recorded in the returned record rather than thrown.
RunRecord run_pipeline(StateStore& store, const RunRequest& request,
                       std::optional<std::string> id = {}, std::optional<std::string> parent = {});

struct ExclusionRequest {
  std::vector<Exclusion> links;
  std::string user;
  std::string file;
  bool reset = false;  // drop the parent's exclusions instead of extending them
};

/// Checks the links against the parent's variables; throws ValidationError
/// or NotFound without running anything.
RunRequest child_request(const StateStore& store, const std::string& parent_id, const ExclusionRequest& req);

/// Retrains the parent's configuration under parent ∪ new exclusions.
RunRecord apply_exclusions(StateStore& store, const std::string& parent_id, const ExclusionRequest& req,
                           std::optional<std::string> id = {});

/// Reloads the checkpoint and stored dataset and extracts again.
CausalGraph reextract(const StateStore& store, const std::string& id);

}  // namespace tcd

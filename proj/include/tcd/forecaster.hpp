#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/adam.hpp"
#include "tcd/attention.hpp"
#include "tcd/autodiff.hpp"
#include "tcd/data.hpp"

namespace tcd {

/// A user-asserted non-cause: `cause` may not influence `effect`.
struct Exclusion {
  std::string cause;
  std::string effect;
  friend auto operator<=>(const Exclusion&, const Exclusion&) = default;
};

/// How source tokens may attend to each other. Only IntraVariable keeps
/// exclusions enforced across stacked layers; AllSources exists as a
/// negative control.
enum class SourceAttention { IntraVariable, AllSources };

struct ModelConfig {
  std::size_t window = 8;          // S, input samples per example
  std::size_t patch = 8;           // P
  std::size_t patch_stride = 8;    // S_patch
  std::size_t embed = 128;         // D
  std::size_t category_embed = 8;  // D'
  std::size_t layers = 4;          // K, per level
  std::size_t heads = 8;
  std::size_t conv_window = 4;     // W_conv
  std::size_t conv_stride = 4;     // S_conv
  std::size_t horizon = 1;         // S_j
  std::size_t example_stride = 1;  // step between consecutive training windows
  double learning_rate = 1e-3;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
  std::size_t full_batch_limit = 1024;
  std::size_t batch_size = 256;
  SourceAttention source_attention = SourceAttention::IntraVariable;

  /// Throws ValidationError, including when the level recursion cannot
  /// reach a single token.
  void validate() const;
  /// Time-series tokens per variable after patching (T).
  std::size_t tokens_per_series() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// floor((S - P) / S_patch) + 1.
std::size_t patch_count(std::size_t window, std::size_t patch, std::size_t stride);
/// Sliding windows over `tokens` tokens: ceil((T - W) / S) + 1, or 1 when T <= W.
std::size_t sliding_window_count(std::size_t tokens, std::size_t width, std::size_t stride);
/// Token counts T^0 .. T^L, stopping at the first level with one token.
/// Throws ValidationError when the recursion stalls or produces empty windows.
std::vector<std::size_t> level_token_counts(std::size_t tokens, std::size_t width,
                                            std::size_t stride);

/// Replicates row and column i of `base` `counts[i]` times.
BinaryMask expand_mask(const BinaryMask& base, std::span<const std::size_t> counts);

struct AttentionMaskSet {
  // Base row/column order is targets first, then sources (dataset indices).
  std::vector<std::size_t> targets;
  std::vector<std::size_t> sources;
  BinaryMask base;

  struct Expanded {
    std::size_t series_tokens;  // tokens per time-series source in the window
    BinaryMask mask;
  };
  std::vector<std::vector<Expanded>> levels;

  /// Index into levels[level] of the mask for windows with `series_tokens`.
  std::size_t find(std::size_t level, std::size_t series_tokens) const;
};

/// Throws ValidationError for exclusions outside sources x targets.
AttentionMaskSet build_masks(std::span<const VariableSpec> specs,
                             std::span<const Exclusion> exclusions, const ModelConfig& config);

struct TrainingTelemetry {
  std::vector<double> epoch_losses;
  std::size_t windows = 0;
  std::size_t steps = 0;

  double initial_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.front(); }
  double final_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.back(); }
  friend bool operator==(const TrainingTelemetry&, const TrainingTelemetry&) = default;
};

/// Encoded tokens for a batch, rows ordered example-major.
struct TokenizedInput {
  std::vector<Tensor> sources;    // per source: [B*T, D] or [B, D] for statics
  std::vector<Tensor> sentinels;  // per target: [B, D]
  std::vector<std::vector<std::uint8_t>> missing;  // per source, per token row
};

/// Raw model outputs: [example][target][value]. Numerical targets give S_j
/// values (1 if static); categorical targets give S_j * C logits (C if static).
using Predictions = std::vector<std::vector<std::vector<double>>>;

class Forecaster {
 public:
  /// Fresh parameters drawn from config.seed.
  Forecaster(std::vector<VariableSpec> specs, ModelConfig config, Normalizer normalizer,
             std::vector<Exclusion> exclusions = {});

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<VariableSpec>& specs() const noexcept { return specs_; }
  const Normalizer& normalizer() const noexcept { return normalizer_; }
  const std::vector<Exclusion>& exclusions() const noexcept { return exclusions_; }
  const AttentionMaskSet& masks() const noexcept { return masks_; }
  const std::vector<std::size_t>& sources() const noexcept { return masks_.sources; }
  const std::vector<std::size_t>& targets() const noexcept { return masks_.targets; }
  /// T^0 .. T^L.
  const std::vector<std::size_t>& level_tokens() const noexcept { return level_tokens_; }
  std::size_t level_count() const noexcept { return level_tokens_.size() - 1; }
  std::size_t output_size(std::size_t target) const;

  ParameterStore& parameters() noexcept { return params_; }
  const ParameterStore& parameters() const noexcept { return params_; }
  TrainingTelemetry& telemetry() noexcept { return telemetry_; }
  const TrainingTelemetry& telemetry() const noexcept { return telemetry_; }

  // Graph construction over normalized examples.
  struct Encoded {
    std::vector<Var> sources;
    std::vector<Var> sentinels;
    std::vector<std::vector<std::uint8_t>> missing;
  };
  Encoded encode(Graph& g, std::span<const WindowedExample> batch) const;
  /// Per target: [B, output_size(j)].
  std::vector<Var> forward(Graph& g, std::span<const WindowedExample> batch) const;
  /// Sum over examples of the per-example loss, times `weight`.
  Var loss(const std::vector<Var>& predictions,
           std::span<const WindowedExample> batch, double weight = 1.0) const;

  /// Inference on normalized examples, chunked; safe for concurrent callers.
  Predictions predict(std::span<const WindowedExample> batch) const;

  /// Normalized windows of a raw dataset laid out for this model.
  std::vector<WindowedExample> windows(const Dataset& raw) const;

 private:
  void init_parameters();

  std::vector<VariableSpec> specs_;
  ModelConfig config_;
  Normalizer normalizer_;
  std::vector<Exclusion> exclusions_;
  AttentionMaskSet masks_;
  std::vector<std::size_t> level_tokens_;
  ParameterStore params_;
  TrainingTelemetry telemetry_;
};

TokenizedInput encode_inputs(const Forecaster& model, std::span<const WindowedExample> batch);

/// Summed loss of raw predictions against targets; missing targets are
/// skipped. Throws ValidationError when no target value is present.
double compute_loss(const Forecaster& model, const Predictions& predictions,
                    std::span<const WindowedExample> batch);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string what, std::shared_ptr<Forecaster> last_good, std::size_t epoch)
      : std::runtime_error(std::move(what)), last_good(std::move(last_good)), epoch(epoch) {}
  std::shared_ptr<Forecaster> last_good;
  std::size_t epoch;
};

struct TrainOptions {
  /// Called after every epoch with (epoch index, epoch loss).
  std::function<void(std::size_t, double)> progress;
};

/// Fits the normalizer on `dataset`, builds windows and runs Adam.
Forecaster train(const Dataset& dataset, std::span<const Exclusion> exclusions,
                 const ModelConfig& config, const TrainOptions& options = {});
/// Continues training an existing model on prepared normalized windows.
void train_epochs(Forecaster& model, std::span<const WindowedExample> examples,
                  const TrainOptions& options = {});

void save_checkpoint(const Forecaster& model, const std::filesystem::path& path);
Forecaster load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(std::span<const Exclusion> exclusions);
std::vector<Exclusion> exclusions_from_json(const nlohmann::json& j);

}  // namespace tcd

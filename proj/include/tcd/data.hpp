#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcd/error.hpp"

namespace tcd {

/// Missing observation marker.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) noexcept { return std::isnan(v); }

enum class VariableKind { StaticNumerical, StaticCategorical, SeriesNumerical, SeriesCategorical };

constexpr bool is_static(VariableKind k) noexcept {
  return k == VariableKind::StaticNumerical || k == VariableKind::StaticCategorical;
}
constexpr bool is_categorical(VariableKind k) noexcept {
  return k == VariableKind::StaticCategorical || k == VariableKind::SeriesCategorical;
}

std::string_view to_string(VariableKind kind);
VariableKind parse_kind(std::string_view text);

struct VariableSpec {
  std::string name;
  VariableKind kind = VariableKind::SeriesNumerical;
  int category_count = 0;  // categorical kinds only
  bool source = true;
  bool target = true;

  void validate() const;
  friend bool operator==(const VariableSpec&, const VariableSpec&) = default;
};

std::vector<std::size_t> source_indices(std::span<const VariableSpec> specs);
std::vector<std::size_t> target_indices(std::span<const VariableSpec> specs);

/// Typed multivariate data. Static variables hold one value, time-series
/// variables hold sample_count() values; categorical values are 1..C.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<VariableSpec> specs, std::vector<std::vector<double>> values);

  const std::vector<VariableSpec>& specs() const noexcept { return specs_; }
  const VariableSpec& spec(std::size_t i) const { return specs_.at(i); }
  std::span<const double> values(std::size_t i) const { return values_.at(i); }
  std::size_t variable_count() const noexcept { return specs_.size(); }
  std::size_t sample_count() const noexcept { return sample_count_; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  /// Bitwise equality (missing markers compare equal to each other).
  bool identical(const Dataset& other) const;

 private:
  std::vector<VariableSpec> specs_;
  std::vector<std::vector<double>> values_;
  std::size_t sample_count_ = 0;
};

/// Linear interpolation between order statistics (rank (n-1)p).
double percentile(std::vector<double> values, double p);

class Normalizer {
 public:
  struct Range {
    double p5 = 0.0;
    double p95 = 1.0;
    bool degenerate = false;
    friend bool operator==(const Range&, const Range&) = default;
  };

  Normalizer() = default;
  explicit Normalizer(std::map<std::string, Range> ranges);

  const std::map<std::string, Range>& ranges() const noexcept { return ranges_; }
  const Range& range(const std::string& name) const;
  bool covers(const std::string& name) const { return ranges_.count(name) != 0; }
  std::vector<std::string> warnings() const;

  /// (x - p5) / (p95 - p5); degenerate variables map to 0.5. No clamping.
  double apply(const std::string& name, double x) const;
  double invert(const std::string& name, double y) const;

  friend bool operator==(const Normalizer&, const Normalizer&) = default;

 private:
  std::map<std::string, Range> ranges_;
};

Normalizer fit_normalizer(const Dataset& dataset);
Dataset apply_normalizer(const Normalizer& normalizer, const Dataset& dataset);
std::vector<double> invert(const Normalizer& normalizer, const std::string& name,
                           std::span<const double> values);

/// Resamples a series from `source_rate` to `target_rate` samples per unit
/// time. Numerical values interpolate linearly between non-missing
/// neighbours; categorical values take the nearest non-missing neighbour.
/// Points before the first or after the last observation stay missing.
std::vector<double> resample_series(std::span<const double> series, double source_rate,
                                    double target_rate, bool categorical = false);

/// Inputs and forecast targets for one sliding window, in source/target order.
struct WindowedExample {
  std::size_t start = 0;  // index of the first input sample
  std::vector<std::vector<double>> inputs;   // per source: S values or 1 static value
  std::vector<std::vector<double>> targets;  // per target: S_j values or 1 static value
};

std::size_t window_count(std::size_t samples, std::size_t window, std::size_t horizon,
                         std::size_t stride);

std::vector<WindowedExample> make_windows(const Dataset& dataset, std::size_t window,
                                          std::size_t horizon, std::size_t stride = 1);

// CSV (one column per variable, empty cell = missing) + JSON schema sidecar.
void save_dataset(const Dataset& dataset, const std::filesystem::path& csv_path,
                  const std::filesystem::path& schema_path);
Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& schema_path);

/// Directory convention: data.csv + schema.json.
void save_dataset_dir(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset_dir(const std::filesystem::path& dir);

std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace tcd

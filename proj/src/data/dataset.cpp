#include <algorithm>
#include <bit>
#include <cstdint>

#include "tcd/data.hpp"

namespace tcd {

std::string_view to_string(VariableKind kind) {
  switch (kind) {
    case VariableKind::StaticNumerical: return "static-numerical";
    case VariableKind::StaticCategorical: return "static-categorical";
    case VariableKind::SeriesNumerical: return "ts-numerical";
    case VariableKind::SeriesCategorical: return "ts-categorical";
  }
  return "unknown";
}

VariableKind parse_kind(std::string_view text) {
  if (text == "static-numerical") return VariableKind::StaticNumerical;
  if (text == "static-categorical") return VariableKind::StaticCategorical;
  if (text == "ts-numerical") return VariableKind::SeriesNumerical;
  if (text == "ts-categorical") return VariableKind::SeriesCategorical;
  throw ValidationError("unknown variable kind '" + std::string(text) + "'");
}

void VariableSpec::validate() const {
  if (name.empty()) throw ValidationError("variable name must not be empty");
  if (name.find_first_of(",\"\r\n") != std::string::npos) {
    throw ValidationError("variable name '" + name + "' contains a CSV delimiter");
  }
  if (is_categorical(kind) && category_count < 2) {
    throw ValidationError("categorical variable '" + name + "' needs at least 2 categories");
  }
  if (!is_categorical(kind) && category_count != 0) {
    throw ValidationError("numerical variable '" + name + "' must not set category_count");
  }
  if (!source && !target) throw ValidationError("variable '" + name + "' has no role");
}

std::vector<std::size_t> source_indices(std::span<const VariableSpec> specs) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].source) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> target_indices(std::span<const VariableSpec> specs) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].target) out.push_back(i);
  }
  return out;
}

Dataset::Dataset(std::vector<VariableSpec> specs, std::vector<std::vector<double>> values)
    : specs_(std::move(specs)), values_(std::move(values)) {
  if (specs_.size() != values_.size()) {
    throw ValidationError("dataset has " + std::to_string(specs_.size()) + " specs but " +
                          std::to_string(values_.size()) + " value arrays");
  }
  std::optional<std::size_t> length;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const VariableSpec& s = specs_[i];
    s.validate();
    for (std::size_t j = 0; j < i; ++j) {
      if (specs_[j].name == s.name) throw ValidationError("duplicate variable '" + s.name + "'");
    }
    const auto& v = values_[i];
    if (is_static(s.kind)) {
      if (v.size() != 1) throw ValidationError("static variable '" + s.name + "' needs one value");
    } else {
      if (length && *length != v.size()) {
        throw ValidationError("time series '" + s.name + "' has " + std::to_string(v.size()) +
                              " samples, expected " + std::to_string(*length));
      }
      length = v.size();
    }
    if (is_categorical(s.kind)) {
      for (double x : v) {
        if (is_missing(x)) continue;
        if (x != std::floor(x) || x < 1 || x > s.category_count) {
          throw ValidationError("categorical variable '" + s.name + "' has value outside 1.." +
                                std::to_string(s.category_count));
        }
      }
    }
  }
  sample_count_ = length.value_or(0);
}

std::optional<std::size_t> Dataset::find(std::string_view name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Dataset::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ValidationError("unknown variable '" + std::string(name) + "'");
}

bool Dataset::identical(const Dataset& other) const {
  if (specs_ != other.specs_ || values_.size() != other.values_.size()) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto& a = values_[i];
    const auto& b = other.values_[i];
    if (a.size() != b.size()) return false;
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (is_missing(a[j]) && is_missing(b[j])) continue;
      if (std::bit_cast<std::uint64_t>(a[j]) != std::bit_cast<std::uint64_t>(b[j])) return false;
    }
  }
  return true;
}

}  // namespace tcd

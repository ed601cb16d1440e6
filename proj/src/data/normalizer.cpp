#include <algorithm>

#include "tcd/data.hpp"

namespace tcd {

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double rank = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Normalizer::Normalizer(std::map<std::string, Range> ranges) : ranges_(std::move(ranges)) {}

const Normalizer::Range& Normalizer::range(const std::string& name) const {
  const auto it = ranges_.find(name);
  if (it == ranges_.end()) throw ValidationError("normalizer has no range for '" + name + "'");
  return it->second;
}

std::vector<std::string> Normalizer::warnings() const {
  std::vector<std::string> out;
  for (const auto& [name, r] : ranges_) {
    if (r.degenerate) out.push_back("variable '" + name + "' has p5 == p95; normalized to 0.5");
  }
  return out;
}

double Normalizer::apply(const std::string& name, double x) const {
  const Range& r = range(name);
  if (is_missing(x)) return kMissing;
  if (r.degenerate) return 0.5;
  return (x - r.p5) / (r.p95 - r.p5);
}

double Normalizer::invert(const std::string& name, double y) const {
  const Range& r = range(name);
  if (is_missing(y)) return kMissing;
  if (r.degenerate) return r.p5;
  return r.p5 + y * (r.p95 - r.p5);
}

Normalizer fit_normalizer(const Dataset& dataset) {
  std::map<std::string, Normalizer::Range> ranges;
  for (std::size_t i = 0; i < dataset.variable_count(); ++i) {
    const VariableSpec& s = dataset.spec(i);
    if (is_categorical(s.kind)) continue;
    std::vector<double> observed;
    for (double x : dataset.values(i)) {
      if (!is_missing(x)) observed.push_back(x);
    }
    // A static variable carries a single value and is inert under scaling.
    if (is_static(s.kind)) {
      if (observed.empty()) throw ValidationError("variable '" + s.name + "' is entirely missing");
      ranges[s.name] = {observed[0], observed[0], true};
      continue;
    }
    if (observed.size() < 2) {
      throw ValidationError("variable '" + s.name + "' has fewer than 2 observed values");
    }
    Normalizer::Range r{percentile(observed, 0.05), percentile(observed, 0.95), false};
    r.degenerate = !(r.p95 > r.p5);
    ranges[s.name] = r;
  }
  return Normalizer(std::move(ranges));
}

Dataset apply_normalizer(const Normalizer& normalizer, const Dataset& dataset) {
  std::vector<std::vector<double>> values;
  for (std::size_t i = 0; i < dataset.variable_count(); ++i) {
    const VariableSpec& s = dataset.spec(i);
    auto src = dataset.values(i);
    std::vector<double> v(src.begin(), src.end());
    if (!is_categorical(s.kind)) {
      for (double& x : v) x = normalizer.apply(s.name, x);
    }
    values.push_back(std::move(v));
  }
  return Dataset(dataset.specs(), std::move(values));
}

std::vector<double> invert(const Normalizer& normalizer, const std::string& name,
                           std::span<const double> values) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double y : values) out.push_back(normalizer.invert(name, y));
  return out;
}

}  // namespace tcd

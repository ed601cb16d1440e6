#include <cmath>

#include "tcd/data.hpp"

namespace tcd {

std::vector<double> resample_series(std::span<const double> series, double source_rate,
                                    double target_rate, bool categorical) {
  if (series.empty()) throw ValidationError("cannot resample an empty series");
  if (!(source_rate > 0.0) || !(target_rate > 0.0)) {
    throw ValidationError("sampling rates must be positive");
  }
  const std::size_t n = series.size();
  // Positions of observed samples, in source-index units.
  std::vector<std::size_t> observed;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_missing(series[i])) observed.push_back(i);
  }
  const double ratio = source_rate / target_rate;  // source samples per output sample
  const double span = static_cast<double>(n - 1);
  const auto out_len = static_cast<std::size_t>(std::floor(span / ratio + 1e-9)) + 1;
  std::vector<double> out(out_len, kMissing);
  if (observed.empty()) return out;

  std::size_t next = 0;  // first observed index with position >= pos
  for (std::size_t m = 0; m < out_len; ++m) {
    const double pos = static_cast<double>(m) * ratio;
    const double nearest = std::round(pos);
    if (std::abs(pos - nearest) < 1e-9) {
      const auto idx = static_cast<std::size_t>(nearest);
      if (idx < n && !is_missing(series[idx])) {
        out[m] = series[idx];
        continue;
      }
    }
    while (next < observed.size() && static_cast<double>(observed[next]) < pos) ++next;
    if (next == 0 || next == observed.size()) continue;  // leading/trailing gap
    const std::size_t lo = observed[next - 1];
    const std::size_t hi = observed[next];
    const double t = (pos - static_cast<double>(lo)) / static_cast<double>(hi - lo);
    if (categorical) {
      out[m] = t <= 0.5 ? series[lo] : series[hi];
    } else {
      out[m] = series[lo] + t * (series[hi] - series[lo]);
    }
  }
  return out;
}

}  // namespace tcd

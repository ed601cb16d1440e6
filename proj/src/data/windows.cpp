#include "tcd/data.hpp"

namespace tcd {

std::size_t window_count(std::size_t samples, std::size_t window, std::size_t horizon,
                         std::size_t stride) {
  if (window == 0 || horizon == 0 || stride == 0) {
    throw ValidationError("window, horizon and stride must be positive");
  }
  if (samples < window + horizon) {
    throw ValidationError("series of " + std::to_string(samples) + " samples is shorter than window " +
                          std::to_string(window) + " + horizon " + std::to_string(horizon));
  }
  return (samples - window - horizon) / stride + 1;
}

std::vector<WindowedExample> make_windows(const Dataset& dataset, std::size_t window,
                                          std::size_t horizon, std::size_t stride) {
  const std::size_t count = window_count(dataset.sample_count(), window, horizon, stride);
  const auto sources = source_indices(dataset.specs());
  const auto targets = target_indices(dataset.specs());
  std::vector<WindowedExample> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    WindowedExample ex;
    ex.start = w * stride;
    for (std::size_t i : sources) {
      auto v = dataset.values(i);
      if (is_static(dataset.spec(i).kind)) {
        ex.inputs.push_back({v[0]});
      } else {
        ex.inputs.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(ex.start),
                               v.begin() + static_cast<std::ptrdiff_t>(ex.start + window));
      }
    }
    for (std::size_t j : targets) {
      auto v = dataset.values(j);
      if (is_static(dataset.spec(j).kind)) {
        ex.targets.push_back({v[0]});
      } else {
        const std::size_t first = ex.start + window;
        ex.targets.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(first),
                                v.begin() + static_cast<std::ptrdiff_t>(first + horizon));
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace tcd

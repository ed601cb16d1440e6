#include <algorithm>
#include <set>

#include "tcd/forecaster.hpp"

namespace tcd {

namespace {

std::string_view to_string(SourceAttention a) {
  return a == SourceAttention::IntraVariable ? "intra-variable" : "all-sources";
}

SourceAttention parse_source_attention(std::string_view text) {
  if (text == "intra-variable") return SourceAttention::IntraVariable;
  if (text == "all-sources") return SourceAttention::AllSources;
  throw ValidationError("unknown source attention policy '" + std::string(text) + "'");
}

}  // namespace

std::size_t patch_count(std::size_t window, std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0 || patch > window) {
    throw ValidationError("patching needs 1 <= P <= S and S_patch >= 1");
  }
  return (window - patch) / stride + 1;
}

std::size_t sliding_window_count(std::size_t tokens, std::size_t width, std::size_t stride) {
  if (width == 0 || stride == 0) throw ValidationError("W_conv and S_conv must be positive");
  if (tokens <= width) return 1;
  return (tokens - width + stride - 1) / stride + 1;
}

std::vector<std::size_t> level_token_counts(std::size_t tokens, std::size_t width,
                                            std::size_t stride) {
  if (tokens == 0) throw ValidationError("no time-series tokens");
  std::vector<std::size_t> counts{tokens};
  // T^0 = 1 still needs one level to produce the decoded tokens.
  do {
    const std::size_t prev = counts.back();
    const std::size_t next = sliding_window_count(prev, width, stride);
    if (prev > 1 && next >= prev) {
      throw ValidationError("W_conv=" + std::to_string(width) + ", S_conv=" +
                            std::to_string(stride) + " never reduces " + std::to_string(prev) +
                            " tokens to one");
    }
    if ((next - 1) * stride >= prev) {
      throw ValidationError("S_conv=" + std::to_string(stride) + " leaves an empty window over " +
                            std::to_string(prev) + " tokens");
    }
    counts.push_back(next);
  } while (counts.back() > 1);
  return counts;
}

void ModelConfig::validate() const {
  if (window == 0) throw ValidationError("input window S must be positive");
  if (patch == 0 || patch > window) throw ValidationError("patch size must satisfy 1 <= P <= S");
  if (patch_stride == 0) throw ValidationError("patch stride must be positive");
  if (embed == 0 || heads == 0 || embed % heads != 0) {
    throw ValidationError("embedding size D=" + std::to_string(embed) +
                          " must be divisible by the head count " + std::to_string(heads));
  }
  if (category_embed == 0) throw ValidationError("intermediate embedding D' must be positive");
  if (layers == 0) throw ValidationError("at least one layer per level is required");
  if (conv_window == 0 || conv_stride == 0) throw ValidationError("W_conv and S_conv must be >= 1");
  if (horizon == 0) throw ValidationError("forecast window S_j must be positive");
  if (example_stride == 0) throw ValidationError("example stride must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  level_token_counts(tokens_per_series(), conv_window, conv_stride);
}

std::size_t ModelConfig::tokens_per_series() const { return patch_count(window, patch, patch_stride); }

nlohmann::json ModelConfig::to_json() const {
  return {{"window", window},
          {"patch", patch},
          {"patch_stride", patch_stride},
          {"embed", embed},
          {"category_embed", category_embed},
          {"layers", layers},
          {"heads", heads},
          {"conv_window", conv_window},
          {"conv_stride", conv_stride},
          {"horizon", horizon},
          {"example_stride", example_stride},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"seed", seed},
          {"full_batch_limit", full_batch_limit},
          {"batch_size", batch_size},
          {"source_attention", std::string(to_string(source_attention))}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "window") c.window = value.get<std::size_t>();
      else if (key == "patch") c.patch = value.get<std::size_t>();
      else if (key == "patch_stride") c.patch_stride = value.get<std::size_t>();
      else if (key == "embed") c.embed = value.get<std::size_t>();
      else if (key == "category_embed") c.category_embed = value.get<std::size_t>();
      else if (key == "layers") c.layers = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "conv_window") c.conv_window = value.get<std::size_t>();
      else if (key == "conv_stride") c.conv_stride = value.get<std::size_t>();
      else if (key == "horizon") c.horizon = value.get<std::size_t>();
      else if (key == "example_stride") c.example_stride = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "full_batch_limit") c.full_batch_limit = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "source_attention") c.source_attention = parse_source_attention(value.get<std::string>());
      else throw ValidationError("unknown model config field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

BinaryMask expand_mask(const BinaryMask& base, std::span<const std::size_t> counts) {
  if (counts.size() != base.rows() || base.rows() != base.cols()) {
    throw ShapeError("expand_mask: counts do not match a square base mask");
  }
  std::vector<std::size_t> origin;
  for (std::size_t i = 0; i < counts.size(); ++i) origin.insert(origin.end(), counts[i], i);
  BinaryMask out(origin.size(), origin.size(), false);
  for (std::size_t r = 0; r < origin.size(); ++r) {
    for (std::size_t c = 0; c < origin.size(); ++c) out.set(r, c, base(origin[r], origin[c]));
  }
  return out;
}

std::size_t AttentionMaskSet::find(std::size_t level, std::size_t series_tokens) const {
  const auto& lv = levels.at(level);
  for (std::size_t i = 0; i < lv.size(); ++i) {
    if (lv[i].series_tokens == series_tokens) return i;
  }
  throw ShapeError("no level " + std::to_string(level) + " mask for windows of " +
                   std::to_string(series_tokens) + " tokens");
}

AttentionMaskSet build_masks(std::span<const VariableSpec> specs,
                             std::span<const Exclusion> exclusions, const ModelConfig& config) {
  config.validate();
  AttentionMaskSet set;
  set.targets = target_indices(specs);
  set.sources = source_indices(specs);
  if (set.targets.empty()) throw ValidationError("no target variables");
  if (set.sources.empty()) throw ValidationError("no source variables");
  const std::size_t m = set.targets.size(), n = set.sources.size();

  auto position = [&](const std::vector<std::size_t>& list, const std::string& name,
                      const char* role) {
    for (std::size_t k = 0; k < list.size(); ++k) {
      if (specs[list[k]].name == name) return k;
    }
    throw ValidationError("exclusion names '" + name + "', which is not a " + role + " variable");
  };

  set.base = BinaryMask(m + n, m + n, false);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) set.base.set(j, m + i, true);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const bool allowed = i == k || config.source_attention == SourceAttention::AllSources;
      set.base.set(m + i, m + k, allowed);
    }
  }
  std::set<Exclusion> seen;
  for (const Exclusion& e : exclusions) {
    const std::size_t i = position(set.sources, e.cause, "source");
    const std::size_t j = position(set.targets, e.effect, "target");
    if (!seen.insert(e).second) continue;
    set.base.set(j, m + i, false);
  }

  const auto tokens = level_token_counts(config.tokens_per_series(), config.conv_window,
                                         config.conv_stride);
  for (std::size_t l = 1; l < tokens.size(); ++l) {
    const std::size_t prev = tokens[l - 1];
    std::set<std::size_t> sizes;
    for (std::size_t w = 0; w < tokens[l]; ++w) {
      const std::size_t start = w * config.conv_stride;
      sizes.insert(std::min(config.conv_window, prev - start));
    }
    std::vector<AttentionMaskSet::Expanded> level;
    for (std::size_t c : sizes) {
      std::vector<std::size_t> counts(m, 1);
      for (std::size_t src : set.sources) counts.push_back(is_static(specs[src].kind) ? 1 : c);
      level.push_back({c, expand_mask(set.base, counts)});
    }
    set.levels.push_back(std::move(level));
  }
  return set;
}

nlohmann::json to_json(std::span<const Exclusion> exclusions) {
  auto out = nlohmann::json::array();
  for (const auto& e : exclusions) out.push_back({{"from", e.cause}, {"to", e.effect}});
  return out;
}

std::vector<Exclusion> exclusions_from_json(const nlohmann::json& j) {
  std::vector<Exclusion> out;
  try {
    for (const auto& e : j) out.push_back({e.at("from").get<std::string>(), e.at("to").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed exclusion list: ") + e.what());
  }
  return out;
}

}  // namespace tcd

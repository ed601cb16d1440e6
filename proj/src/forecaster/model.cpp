#include <algorithm>
#include <cmath>
#include <random>

#include "tcd/forecaster.hpp"

namespace tcd {

namespace {

constexpr std::size_t kInferenceChunk = 256;

class Init {
 public:
  explicit Init(std::uint64_t seed) : gen_(seed) {}

  Tensor normal(std::vector<std::size_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * gauss_(gen_);
    return t;
  }
  Tensor glorot(std::size_t rows, std::size_t cols) {
    return normal({rows, cols}, std::sqrt(2.0 / static_cast<double>(rows + cols)));
  }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

constexpr double kTokenInitStd = 0.02;

std::string layer_prefix(std::size_t level, std::size_t layer) {
  return "level" + std::to_string(level) + "/layer" + std::to_string(layer) + "/";
}

int category_of(double v, int count, const std::string& name) {
  if (v != std::floor(v) || v < 1.0 || v > static_cast<double>(count)) {
    throw ValidationError("category " + format_double(v) + " of '" + name + "' outside 1.." +
                          std::to_string(count));
  }
  return static_cast<int>(v) - 1;
}

Var transformer_layer(Graph& g, const std::string& p, Var x,
                      const std::shared_ptr<const AttentionLayout>& layout) {
  using namespace ad;
  Var h = layer_norm(x, g.param(p + "ln1.gamma"), g.param(p + "ln1.beta"));
  Var q = linear(h, g.param(p + "attn.q.w"), g.param(p + "attn.q.b"));
  Var k = linear(h, g.param(p + "attn.k.w"), g.param(p + "attn.k.b"));
  Var v = linear(h, g.param(p + "attn.v.w"), g.param(p + "attn.v.b"));
  Var a = masked_self_attention(q, k, v, layout);
  x = add(x, linear(a, g.param(p + "attn.o.w"), g.param(p + "attn.o.b")));
  Var h2 = layer_norm(x, g.param(p + "ln2.gamma"), g.param(p + "ln2.beta"));
  Var f = gelu(linear(h2, g.param(p + "ffn.in.w"), g.param(p + "ffn.in.b")));
  return add(x, linear(f, g.param(p + "ffn.out.w"), g.param(p + "ffn.out.b")));
}

}  // namespace

Forecaster::Forecaster(std::vector<VariableSpec> specs, ModelConfig config, Normalizer normalizer,
                       std::vector<Exclusion> exclusions)
    : specs_(std::move(specs)),
      config_(config),
      normalizer_(std::move(normalizer)),
      exclusions_(std::move(exclusions)) {
  for (const auto& s : specs_) s.validate();
  config_.validate();
  masks_ = build_masks(specs_, exclusions_, config_);
  level_tokens_ = level_token_counts(config_.tokens_per_series(), config_.conv_window,
                                     config_.conv_stride);
  for (std::size_t src : masks_.sources) {
    const auto& s = specs_[src];
    if (s.kind == VariableKind::SeriesNumerical && !normalizer_.covers(s.name)) {
      throw ValidationError("normalizer has no range for '" + s.name + "'");
    }
  }
  init_parameters();
}

std::size_t Forecaster::output_size(std::size_t target) const {
  const auto& s = specs_.at(masks_.targets.at(target));
  const std::size_t steps = is_static(s.kind) ? 1 : config_.horizon;
  return is_categorical(s.kind) ? steps * static_cast<std::size_t>(s.category_count) : steps;
}

void Forecaster::init_parameters() {
  Init init(config_.seed);
  const std::size_t d = config_.embed, dp = config_.category_embed, p = config_.patch;
  bool any_series = false;
  for (std::size_t src : masks_.sources) {
    const auto& s = specs_[src];
    const auto c = static_cast<std::size_t>(s.category_count);
    switch (s.kind) {
      case VariableKind::SeriesNumerical:
        params_.add("encode/" + s.name, init.glorot(p, d));
        any_series = true;
        break;
      case VariableKind::SeriesCategorical:
        params_.add("embed/" + s.name, init.glorot(c, dp));
        params_.add("encode/" + s.name, init.glorot(p * dp, d));
        any_series = true;
        break;
      case VariableKind::StaticNumerical:
        params_.add("encode/" + s.name, init.glorot(1, d));
        break;
      case VariableKind::StaticCategorical:
        params_.add("encode/" + s.name, init.glorot(c, d));
        break;
    }
    params_.add("missing/" + s.name, init.normal({1, d}, kTokenInitStd));
  }
  for (std::size_t tgt : masks_.targets) {
    params_.add("sentinel/" + specs_[tgt].name, init.normal({1, d}, kTokenInitStd));
  }
  for (const auto& s : specs_) {
    if (s.source || s.target) params_.add("identity/" + s.name, init.normal({d}, kTokenInitStd));
  }
  if (any_series) {
    params_.add("position", init.normal({config_.tokens_per_series(), d}, kTokenInitStd));
  }
  for (std::size_t l = 0; l < level_count(); ++l) {
    for (std::size_t k = 0; k < config_.layers; ++k) {
      const std::string pre = layer_prefix(l, k);
      params_.add(pre + "ln1.gamma", Tensor({d}, 1.0));
      params_.add(pre + "ln1.beta", Tensor({d}, 0.0));
      for (const char* proj : {"q", "k", "v", "o"}) {
        params_.add(pre + "attn." + proj + ".w", init.glorot(d, d));
        params_.add(pre + "attn." + proj + ".b", Tensor({d}, 0.0));
      }
      params_.add(pre + "ln2.gamma", Tensor({d}, 1.0));
      params_.add(pre + "ln2.beta", Tensor({d}, 0.0));
      params_.add(pre + "ffn.in.w", init.glorot(d, 4 * d));
      params_.add(pre + "ffn.in.b", Tensor({4 * d}, 0.0));
      params_.add(pre + "ffn.out.w", init.glorot(4 * d, d));
      params_.add(pre + "ffn.out.b", Tensor({d}, 0.0));
    }
  }
  params_.add("final_ln.gamma", Tensor({d}, 1.0));
  params_.add("final_ln.beta", Tensor({d}, 0.0));
  for (std::size_t j = 0; j < masks_.targets.size(); ++j) {
    const auto& name = specs_[masks_.targets[j]].name;
    params_.add("decode/" + name + ".w", init.glorot(d, output_size(j)));
    params_.add("decode/" + name + ".b", Tensor({output_size(j)}, 0.0));
  }
}

Forecaster::Encoded Forecaster::encode(Graph& g, std::span<const WindowedExample> batch) const {
  const std::size_t nb = batch.size();
  const std::size_t s_len = config_.window, p = config_.patch, sp = config_.patch_stride;
  const std::size_t t_count = config_.tokens_per_series();
  if (nb == 0) throw ValidationError("empty batch");
  Encoded out;
  for (std::size_t k = 0; k < masks_.sources.size(); ++k) {
    const auto& s = specs_[masks_.sources[k]];
    const bool series = !is_static(s.kind);
    const std::size_t rows = series ? nb * t_count : nb;
    const std::size_t expected = series ? s_len : 1;
    for (const auto& ex : batch) {
      if (ex.inputs.size() != masks_.sources.size() || ex.inputs[k].size() != expected) {
        throw ShapeError("example input for '" + s.name + "' has the wrong length");
      }
    }
    std::vector<std::uint8_t> missing(rows, 0);
    Var tok;
    if (!is_categorical(s.kind)) {
      const std::size_t width = series ? p : 1;
      Tensor x({rows, width});
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t t = 0; t < rows / nb; ++t) {
          const std::size_t r = b * (rows / nb) + t;
          for (std::size_t q = 0; q < width; ++q) {
            const double v = batch[b].inputs[k][t * sp + q];
            if (is_missing(v)) missing[r] = 1;
            else x.at(r, q) = v;
          }
          if (missing[r]) std::fill_n(x.data().data() + r * width, width, 0.0);
        }
      }
      tok = ad::matmul(g.constant(std::move(x)), g.param("encode/" + s.name));
    } else {
      const std::size_t width = series ? p : 1;
      std::vector<std::size_t> idx(rows * width, 0);
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t t = 0; t < rows / nb; ++t) {
          const std::size_t r = b * (rows / nb) + t;
          for (std::size_t q = 0; q < width; ++q) {
            const double v = batch[b].inputs[k][t * sp + q];
            if (is_missing(v)) {
              missing[r] = 1;
              continue;
            }
            idx[r * width + q] = static_cast<std::size_t>(category_of(v, s.category_count, s.name));
          }
        }
      }
      if (series) {
        Var e = ad::gather_rows(g.param("embed/" + s.name), std::move(idx));
        e = ad::reshape(e, rows, p * config_.category_embed);
        tok = ad::matmul(e, g.param("encode/" + s.name));
      } else {
        tok = ad::gather_rows(g.param("encode/" + s.name), std::move(idx));
      }
    }
    tok = ad::replace_rows(tok, g.param("missing/" + s.name), missing);
    out.sources.push_back(tok);
    out.missing.push_back(std::move(missing));
  }
  for (std::size_t tgt : masks_.targets) {
    out.sentinels.push_back(
        ad::gather_rows(g.param("sentinel/" + specs_[tgt].name), std::vector<std::size_t>(nb, 0)));
  }
  return out;
}

std::vector<Var> Forecaster::forward(Graph& g, std::span<const WindowedExample> batch) const {
  const Encoded enc = encode(g, batch);
  const std::size_t nb = batch.size();
  const std::size_t m = masks_.targets.size();
  const std::size_t n = masks_.sources.size();
  const std::size_t entries = m + n;

  std::vector<bool> series(entries, false);
  for (std::size_t i = 0; i < n; ++i) series[m + i] = !is_static(specs_[masks_.sources[i]].kind);

  // Entry-major parts with embeddings added.
  std::vector<Var> parts;
  for (std::size_t j = 0; j < m; ++j) {
    parts.push_back(ad::add_bias(enc.sentinels[j], g.param("identity/" + specs_[masks_.targets[j]].name)));
  }
  const std::size_t t0 = level_tokens_.front();
  for (std::size_t i = 0; i < n; ++i) {
    Var tok = enc.sources[i];
    if (series[m + i]) {
      std::vector<std::size_t> pos(nb * t0);
      for (std::size_t r = 0; r < pos.size(); ++r) pos[r] = r % t0;
      tok = ad::add(tok, ad::gather_rows(g.param("position"), std::move(pos)));
    }
    parts.push_back(ad::add_bias(tok, g.param("identity/" + specs_[masks_.sources[i]].name)));
  }

  // State rows are example-major: row(b, e, t) = b * R + offset[e] + t.
  auto layout_of = [&](std::size_t tokens, std::vector<std::size_t>& offset) {
    offset.assign(entries + 1, 0);
    for (std::size_t e = 0; e < entries; ++e) offset[e + 1] = offset[e] + (series[e] ? tokens : 1);
    return offset[entries];
  };
  std::vector<std::size_t> offset;
  std::size_t per_example = layout_of(t0, offset);
  Var state;
  {
    std::vector<std::size_t> order(nb * per_example);
    std::size_t base = 0;
    for (std::size_t e = 0; e < entries; ++e) {
      const std::size_t cnt = offset[e + 1] - offset[e];
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t t = 0; t < cnt; ++t) order[b * per_example + offset[e] + t] = base + b * cnt + t;
      }
      base += nb * cnt;
    }
    state = ad::gather_rows(ad::concat_rows(parts), std::move(order));
  }

  for (std::size_t l = 1; l <= level_count(); ++l) {
    const std::size_t prev = level_tokens_[l - 1], next = level_tokens_[l];
    const auto& level_masks = masks_.levels[l - 1];
    auto layout = std::make_shared<AttentionLayout>();
    layout->heads = config_.heads;
    for (const auto& em : level_masks) layout->masks.push_back(em.mask);

    const bool single = next == 1 && prev <= config_.conv_window;
    std::vector<std::size_t> rows;
    std::vector<std::size_t> new_offset;
    const std::size_t new_per_example = layout_of(next, new_offset);
    // pool_src[b][e][w] lists block rows averaged into the new token.
    auto pool = std::make_shared<RowGroups>();
    std::vector<std::vector<std::size_t>> groups(nb * new_per_example);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t w = 0; w < next; ++w) {
        const std::size_t start = w * config_.conv_stride;
        const std::size_t c = std::min(config_.conv_window, prev - start);
        const std::size_t block_offset = rows.size();
        for (std::size_t e = 0; e < entries; ++e) {
          if (series[e]) {
            auto& grp = groups[b * new_per_example + new_offset[e] + w];
            for (std::size_t t = 0; t < c; ++t) {
              grp.push_back(rows.size());
              rows.push_back(b * per_example + offset[e] + start + t);
            }
          } else {
            groups[b * new_per_example + new_offset[e]].push_back(rows.size());
            rows.push_back(b * per_example + offset[e]);
          }
        }
        layout->blocks.push_back({block_offset, rows.size() - block_offset, masks_.find(l - 1, c)});
      }
    }
    Var h = single ? state : ad::gather_rows(state, rows);
    std::shared_ptr<const AttentionLayout> shared = layout;
    for (std::size_t k = 0; k < config_.layers; ++k) h = transformer_layer(g, layer_prefix(l - 1, k), h, shared);
    if (single && prev == 1) {
      state = h;
    } else {
      for (const auto& grp : groups) pool->add(grp);
      state = ad::mean_rows(h, pool);
    }
    offset = std::move(new_offset);
    per_example = new_per_example;
  }

  std::vector<std::size_t> target_rows;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t b = 0; b < nb; ++b) target_rows.push_back(b * per_example + offset[j]);
  }
  Var y = ad::layer_norm(ad::gather_rows(state, std::move(target_rows)), g.param("final_ln.gamma"),
                         g.param("final_ln.beta"));
  std::vector<Var> out;
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<std::size_t> sel(nb);
    for (std::size_t b = 0; b < nb; ++b) sel[b] = j * nb + b;
    Var yj = m == 1 ? y : ad::gather_rows(y, std::move(sel));
    const auto& name = specs_[masks_.targets[j]].name;
    out.push_back(ad::linear(yj, g.param("decode/" + name + ".w"), g.param("decode/" + name + ".b")));
  }
  return out;
}

Var Forecaster::loss(const std::vector<Var>& predictions,
                     std::span<const WindowedExample> batch, double weight) const {
  const std::size_t nb = batch.size();
  if (predictions.size() != masks_.targets.size()) throw ShapeError("prediction count mismatch");
  std::optional<Var> total;
  std::size_t present = 0;
  for (std::size_t j = 0; j < masks_.targets.size(); ++j) {
    const auto& s = specs_[masks_.targets[j]];
    const std::size_t steps = is_static(s.kind) ? 1 : config_.horizon;
    for (const auto& ex : batch) {
      if (ex.targets.size() != masks_.targets.size() || ex.targets[j].size() != steps) {
        throw ShapeError("example target for '" + s.name + "' has the wrong length");
      }
    }
    Var term;
    if (!is_categorical(s.kind)) {
      Tensor target({nb, steps});
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
          target.at(b, t) = batch[b].targets[j][t];
          if (!is_missing(target.at(b, t))) ++present;
        }
      }
      term = ad::l1_loss(predictions[j], target, weight);
    } else {
      std::vector<int> labels(nb * steps, -1);
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
          const double v = batch[b].targets[j][t];
          if (is_missing(v)) continue;
          labels[b * steps + t] = category_of(v, s.category_count, s.name);
          ++present;
        }
      }
      Var logits = ad::reshape(predictions[j], nb * steps, static_cast<std::size_t>(s.category_count));
      term = ad::cross_entropy(logits, labels, weight);
    }
    total = total ? ad::add(*total, term) : term;
  }
  if (present == 0) throw ValidationError("every target value in the batch is missing");
  return *total;
}

Predictions Forecaster::predict(std::span<const WindowedExample> batch) const {
  Predictions out(batch.size());
  for (std::size_t lo = 0; lo < batch.size(); lo += kInferenceChunk) {
    const std::size_t hi = std::min(batch.size(), lo + kInferenceChunk);
    Graph g(&params_, false);
    const auto preds = forward(g, batch.subspan(lo, hi - lo));
    for (std::size_t b = lo; b < hi; ++b) {
      out[b].resize(preds.size());
      for (std::size_t j = 0; j < preds.size(); ++j) {
        const Tensor& v = preds[j].value();
        const std::size_t w = v.cols();
        out[b][j].assign(v.data().begin() + static_cast<std::ptrdiff_t>((b - lo) * w),
                         v.data().begin() + static_cast<std::ptrdiff_t>((b - lo + 1) * w));
      }
    }
  }
  return out;
}

std::vector<WindowedExample> Forecaster::windows(const Dataset& raw) const {
  if (raw.specs() != specs_) throw ValidationError("dataset variables do not match the model");
  return make_windows(apply_normalizer(normalizer_, raw), config_.window, config_.horizon,
                      config_.example_stride);
}

TokenizedInput encode_inputs(const Forecaster& model, std::span<const WindowedExample> batch) {
  Graph g(&model.parameters(), false);
  const auto enc = model.encode(g, batch);
  TokenizedInput out;
  for (const Var& v : enc.sources) out.sources.push_back(v.value());
  for (const Var& v : enc.sentinels) out.sentinels.push_back(v.value());
  out.missing = enc.missing;
  return out;
}

double compute_loss(const Forecaster& model, const Predictions& predictions,
                    std::span<const WindowedExample> batch) {
  if (predictions.size() != batch.size()) throw ShapeError("prediction/example count mismatch");
  Graph g(nullptr, false);
  std::vector<Var> preds;
  for (std::size_t j = 0; j < model.targets().size(); ++j) {
    const std::size_t w = model.output_size(j);
    Tensor t({batch.size(), w});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (predictions[b].size() != model.targets().size() || predictions[b][j].size() != w) {
        throw ShapeError("prediction shape mismatch");
      }
      std::copy(predictions[b][j].begin(), predictions[b][j].end(), t.data().data() + b * w);
    }
    preds.push_back(g.constant(std::move(t)));
  }
  return model.loss(preds, batch).value().item();
}

}  // namespace tcd

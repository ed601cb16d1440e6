#include "tcd/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace tcd {

namespace {

constexpr std::size_t kPerturbationBatch = 1024;

// Scalar output of target j for one prediction. Categorical targets use the
// probability of `cls[t]` (the class chosen on the unperturbed input).
double scalar_output(const VariableSpec& spec, const std::vector<double>& out,
                     const std::vector<std::size_t>& cls) {
  if (!is_categorical(spec.kind)) {
    double s = 0.0;
    for (double v : out) s += v;
    return s / static_cast<double>(out.size());
  }
  const auto c = static_cast<std::size_t>(spec.category_count);
  const std::size_t steps = out.size() / c;
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double* row = out.data() + t * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    total += std::exp(row[cls[t]] - mx) / z;
  }
  return total / static_cast<double>(steps);
}

std::vector<std::size_t> predicted_classes(const VariableSpec& spec, const std::vector<double>& out) {
  if (!is_categorical(spec.kind)) return {};
  const auto c = static_cast<std::size_t>(spec.category_count);
  std::vector<std::size_t> cls;
  for (std::size_t t = 0; t * c < out.size(); ++t) {
    const auto first = out.begin() + static_cast<std::ptrdiff_t>(t * c);
    cls.push_back(static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(c)) - first));
  }
  return cls;
}

struct Probe {
  std::size_t example;
  std::size_t source;
  std::size_t position;
};

}  // namespace

std::string_view to_string(Aggregation a) {
  return a == Aggregation::MeanAbsolute ? "mean-absolute" : "signed";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "mean-absolute") return Aggregation::MeanAbsolute;
  if (text == "signed") return Aggregation::Signed;
  throw ValidationError("unknown aggregation '" + std::string(text) + "'");
}

BlackBox black_box(const Forecaster& model) {
  return {model.specs(), model.config().window,
          [&model](std::span<const WindowedExample> batch) { return model.predict(batch); }};
}

std::vector<GradientMatrix> finite_diff_gradients(const BlackBox& model,
                                                  std::span<const WindowedExample> examples,
                                                  double epsilon, Aggregation aggregation) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw ValidationError("epsilon must lie in (0, 1], got " + format_double(epsilon));
  }
  if (examples.empty()) throw ValidationError("no examples to differentiate");
  const auto sources = source_indices(model.specs);
  const auto targets = target_indices(model.specs);
  const std::size_t s_len = model.window, n = sources.size();

  std::vector<GradientMatrix> grads;
  for (std::size_t tgt : targets) {
    GradientMatrix g;
    g.target = model.specs[tgt].name;
    for (std::size_t src : sources) {
      g.sources.push_back(model.specs[src].name);
      g.static_source.push_back(is_static(model.specs[src].kind));
    }
    g.values = Tensor({s_len, n});
    grads.push_back(std::move(g));
  }

  const Predictions base = model.predict(examples);
  if (base.size() != examples.size()) throw ShapeError("black box returned the wrong number of predictions");
  std::vector<std::vector<std::vector<std::size_t>>> classes(examples.size());
  for (std::size_t e = 0; e < examples.size(); ++e) {
    for (std::size_t j = 0; j < targets.size(); ++j) {
      classes[e].push_back(predicted_classes(model.specs[targets[j]], base[e].at(j)));
    }
  }

  std::vector<Probe> probes;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& values = examples[e].inputs.at(i);
      for (std::size_t s = 0; s < values.size(); ++s) {
        if (!is_missing(values[s])) probes.push_back({e, i, s});
      }
    }
  }

  std::vector<WindowedExample> batch;
  for (std::size_t lo = 0; lo < probes.size(); lo += kPerturbationBatch / 2) {
    const std::size_t hi = std::min(probes.size(), lo + kPerturbationBatch / 2);
    batch.clear();
    for (std::size_t p = lo; p < hi; ++p) {
      const Probe& pr = probes[p];
      const auto& spec = model.specs[sources[pr.source]];
      WindowedExample up = examples[pr.example], down = examples[pr.example];
      double& u = up.inputs[pr.source][pr.position];
      double& d = down.inputs[pr.source][pr.position];
      if (is_categorical(spec.kind)) {
        // One-sided: next category (cyclic) against the observed one.
        const int c = spec.category_count;
        u = static_cast<double>(static_cast<int>(u) % c + 1);
      } else {
        u += epsilon;
        d -= epsilon;
      }
      batch.push_back(std::move(up));
      batch.push_back(std::move(down));
    }
    const Predictions out = model.predict(batch);
    if (out.size() != batch.size()) throw ShapeError("black box returned the wrong number of predictions");
    for (std::size_t p = lo; p < hi; ++p) {
      const Probe& pr = probes[p];
      const auto& plus = out[2 * (p - lo)];
      const auto& minus = out[2 * (p - lo) + 1];
      for (std::size_t j = 0; j < targets.size(); ++j) {
        const auto& spec = model.specs[targets[j]];
        const auto& cls = classes[pr.example][j];
        const double diff = scalar_output(spec, plus.at(j), cls) - scalar_output(spec, minus.at(j), cls);
        grads[j].values.at(pr.position, pr.source) += aggregation == Aggregation::MeanAbsolute ? std::abs(diff) : diff;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(examples.size());
  for (auto& g : grads) g.values.mat() *= inv;
  return grads;
}

CausalScores normalize_scores(const GradientMatrix& grad) {
  if (grad.values.size() == 0) throw ValidationError("empty gradient matrix");
  CausalScores out;
  out.normalized = grad;
  double mx = 0.0;
  for (double v : grad.values.data()) mx = std::max(mx, std::abs(v));
  out.scale = mx;
  if (mx == 0.0) {
    out.degenerate = true;
    return out;
  }
  for (double& v : out.normalized.values.data()) v /= mx;
  return out;
}

bool CausalGraph::contains(const std::string& cause, const std::string& effect) const {
  return find(cause, effect) != nullptr;
}

const CausalEdge* CausalGraph::find(const std::string& cause, const std::string& effect) const {
  for (const auto& e : edges) {
    if (e.cause == cause && e.effect == effect) return &e;
  }
  return nullptr;
}

nlohmann::json CausalGraph::to_json() const {
  nlohmann::json j;
  j["schema"] = 1;
  j["nodes"] = nodes;
  j["edges"] = nlohmann::json::array();
  for (const auto& e : edges) {
    j["edges"].push_back({{"from", e.cause},
                          {"to", e.effect},
                          {"score", e.score},
                          {"lag", e.lag ? nlohmann::json(*e.lag) : nlohmann::json(nullptr)}});
  }
  j["tau"] = tau;
  j["epsilon"] = epsilon;
  return j;
}

CausalGraph CausalGraph::from_json(const nlohmann::json& j) {
  CausalGraph g;
  try {
    g.nodes = j.at("nodes").get<std::vector<std::string>>();
    for (const auto& e : j.at("edges")) {
      CausalEdge edge{e.at("from").get<std::string>(), e.at("to").get<std::string>(),
                      e.at("score").get<double>(), std::nullopt};
      if (!e.at("lag").is_null()) edge.lag = e.at("lag").get<int>();
      g.edges.push_back(std::move(edge));
    }
    g.tau = j.at("tau").get<double>();
    g.epsilon = j.at("epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed graph: ") + e.what());
  }
  return g;
}

CausalGraph build_graph(std::span<const CausalScores> scores, std::vector<std::string> nodes,
                        double tau, double epsilon, std::span<const Exclusion> exclusions) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau must lie in [0, 1]");
  const std::set<Exclusion> excluded(exclusions.begin(), exclusions.end());
  CausalGraph g;
  g.nodes = std::move(nodes);
  g.tau = tau;
  g.epsilon = epsilon;
  for (const auto& sc : scores) {
    const GradientMatrix& m = sc.normalized;
    const std::size_t s_len = m.positions();
    for (std::size_t i = 0; i < m.sources.size(); ++i) {
      double best = 0.0;
      std::size_t best_s = 0;
      for (std::size_t s = 0; s < s_len; ++s) {
        const double v = std::abs(m.at(s, i));
        if (v >= best) {
          best = v;
          best_s = s;
        }
      }
      if (!(best > 0.0) || best < tau) continue;
      if (excluded.count({m.sources[i], m.target})) continue;
      CausalEdge e{m.sources[i], m.target, best, std::nullopt};
      if (!m.static_source[i]) e.lag = static_cast<int>(s_len - best_s);
      g.edges.push_back(std::move(e));
    }
  }
  return g;
}

void ExtractionConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in (0, 1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau must lie in [0, 1]");
}

nlohmann::json ExtractionConfig::to_json() const {
  return {{"epsilon", epsilon}, {"tau", tau}, {"aggregation", std::string(to_string(aggregation))}};
}

ExtractionConfig ExtractionConfig::from_json(const nlohmann::json& j) {
  ExtractionConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "tau") c.tau = value.get<double>();
      else if (key == "aggregation") c.aggregation = parse_aggregation(value.get<std::string>());
      else throw ValidationError("unknown extraction field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed extraction config: ") + e.what());
  }
  return c;
}

Extraction extract(const BlackBox& model, std::span<const WindowedExample> examples,
                   const ExtractionConfig& config, std::span<const Exclusion> exclusions) {
  config.validate();
  Extraction out;
  out.gradients = finite_diff_gradients(model, examples, config.epsilon, config.aggregation);
  for (const auto& g : out.gradients) out.scores.push_back(normalize_scores(g));
  std::vector<std::string> nodes;
  for (const auto& s : model.specs) {
    if (s.source || s.target) nodes.push_back(s.name);
  }
  out.graph = build_graph(out.scores, std::move(nodes), config.tau, config.epsilon, exclusions);
  return out;
}

Extraction extract(const Forecaster& model, const Dataset& dataset, const ExtractionConfig& config) {
  const auto examples = model.windows(dataset);
  return extract(black_box(model), examples, config, model.exclusions());
}

nlohmann::json gradient_json(const GradientMatrix& raw, const CausalScores& scores) {
  auto rows = [](const Tensor& t) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t.at(r, c));
      out.push_back(std::move(row));
    }
    return out;
  };
  nlohmann::json j;
  j["schema"] = 1;
  j["target"] = raw.target;
  j["columns"] = raw.sources;
  std::vector<std::size_t> positions(raw.positions());
  for (std::size_t s = 0; s < positions.size(); ++s) positions[s] = s + 1;
  j["positions"] = positions;
  j["static_columns"] = raw.static_source;
  j["raw"] = rows(raw.values);
  j["normalized"] = rows(scores.normalized.values);
  j["scale"] = scores.scale;
  j["degenerate"] = scores.degenerate;
  return j;
}

}  // namespace tcd

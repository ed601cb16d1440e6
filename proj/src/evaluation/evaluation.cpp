#include "tcd/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace tcd {

namespace {

void check_nodes(const CausalGraph& predicted, const GroundTruth& truth) {
  const std::set<std::string> nodes(predicted.nodes.begin(), predicted.nodes.end());
  for (const auto& e : truth.edges) {
    for (const auto* name : {&e.cause, &e.effect}) {
      if (!nodes.count(*name)) throw ValidationError("truth names node '" + *name + "' missing from the graph");
    }
  }
}

std::string cell(const Summary& s) {
  if (s.count == 0) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", s.mean, s.std);
  return buf;
}

nlohmann::json summary_json(const Summary& s) {
  if (s.count == 0) return {{"mean", nullptr}, {"std", nullptr}, {"count", 0}};
  return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

EdgeScore f1_edges(const CausalGraph& predicted, const GroundTruth& truth) {
  check_nodes(predicted, truth);
  std::set<std::pair<std::string, std::string>> pred, real;
  for (const auto& e : predicted.edges) pred.insert({e.cause, e.effect});
  for (const auto& e : truth.edges) real.insert({e.cause, e.effect});
  EdgeScore s;
  for (const auto& e : pred) {
    if (real.count(e)) ++s.counts.tp;
    else ++s.counts.fp;
  }
  s.counts.fn = real.size() - s.counts.tp;
  const auto tp = static_cast<double>(s.counts.tp);
  if (!pred.empty()) s.precision = tp / static_cast<double>(pred.size());
  if (!real.empty()) s.recall = tp / static_cast<double>(real.size());
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

LagScore pod_score(const CausalGraph& predicted, const GroundTruth& truth) {
  check_nodes(predicted, truth);
  LagScore out;
  double abs_err = 0.0;
  for (const auto& t : truth.edges) {
    if (!t.lag) continue;
    const CausalEdge* e = predicted.find(t.cause, t.effect);
    if (!e || !e->lag) continue;
    ++out.lagged_true_positives;
    if (*e->lag == *t.lag) ++out.exact;
    abs_err += std::abs(*e->lag - *t.lag);
  }
  if (out.lagged_true_positives > 0) {
    const auto n = static_cast<double>(out.lagged_true_positives);
    out.pod = static_cast<double>(out.exact) / n;
    out.mae = abs_err / n;
  }
  return out;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

EvalReport evaluate_run(std::span<const RunPair> runs) {
  if (runs.empty()) throw ValidationError("no runs to evaluate");
  EvalReport r;
  std::vector<double> p, rc, f, pod, mae;
  for (const auto& run : runs) {
    RunMetrics m{f1_edges(run.predicted, run.truth), pod_score(run.predicted, run.truth)};
    p.push_back(m.edges.precision);
    rc.push_back(m.edges.recall);
    f.push_back(m.edges.f1);
    if (m.lags.pod) {
      pod.push_back(*m.lags.pod);
      mae.push_back(*m.lags.mae);
    }
    r.runs.push_back(m);
  }
  r.precision = summarize(p);
  r.recall = summarize(rc);
  r.f1 = summarize(f);
  r.pod = summarize(pod);
  r.lag_mae = summarize(mae);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["schema"] = 1;
  j["runs"] = nlohmann::json::array();
  for (const auto& m : runs) {
    j["runs"].push_back({{"precision", m.edges.precision},
                         {"recall", m.edges.recall},
                         {"f1", m.edges.f1},
                         {"tp", m.edges.counts.tp},
                         {"fp", m.edges.counts.fp},
                         {"fn", m.edges.counts.fn},
                         {"pod", optional_json(m.lags.pod)},
                         {"lag_mae", optional_json(m.lags.mae)}});
  }
  j["precision"] = summary_json(precision);
  j["recall"] = summary_json(recall);
  j["f1"] = summary_json(f1);
  j["pod"] = summary_json(pod);
  j["lag_mae"] = summary_json(lag_mae);
  return j;
}

std::string format_tables(std::span<const std::pair<std::string, EvalReport>> rows) {
  std::size_t width = 7;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  auto table = [&](const char* title, const char* metric, auto pick) {
    out << title << '\n';
    out << std::string(width, ' ') << "  " << metric << '\n';
    for (const auto& [name, report] : rows) {
      out << name << std::string(width - name.size(), ' ') << "  " << cell(pick(report)) << '\n';
    }
  };
  table("Table 1: causal graph F1", "F1", [](const EvalReport& r) { return r.f1; });
  out << '\n';
  table("Table 2: precision of delay", "PoD", [](const EvalReport& r) { return r.pod; });
  return out.str();
}

}  // namespace tcd

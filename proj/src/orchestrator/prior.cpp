#include <algorithm>

#include "tcd/orchestrator.hpp"

namespace tcd {

void PriorKnowledge::add(Exclusion link, Provenance provenance) {
  if (contains(link)) {
    throw ValidationError("duplicate exclusion " + link.cause + " -> " + link.effect);
  }
  entries_.push_back({std::move(link), std::move(provenance)});
}

bool PriorKnowledge::contains(const Exclusion& link) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const PriorEntry& e) { return e.link == link; });
}

std::vector<Exclusion> PriorKnowledge::exclusions() const {
  std::vector<Exclusion> out;
  for (const auto& e : entries_) out.push_back(e.link);
  return out;
}

std::size_t PriorKnowledge::max_iteration() const {
  std::size_t m = 0;
  for (const auto& e : entries_) m = std::max(m, e.provenance.iteration);
  return m;
}

void PriorKnowledge::validate(std::span<const VariableSpec> specs) const {
  auto find = [&](const std::string& name) -> const VariableSpec* {
    for (const auto& s : specs) {
      if (s.name == name) return &s;
    }
    return nullptr;
  };
  for (const auto& e : entries_) {
    const VariableSpec* cause = find(e.link.cause);
    const VariableSpec* effect = find(e.link.effect);
    if (!cause) throw ValidationError("exclusion names unknown variable '" + e.link.cause + "'");
    if (!effect) throw ValidationError("exclusion names unknown variable '" + e.link.effect + "'");
    if (!cause->source) throw ValidationError("'" + e.link.cause + "' is not a source variable");
    if (!effect->target) throw ValidationError("'" + e.link.effect + "' is not a target variable");
  }
}

nlohmann::json PriorKnowledge::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries_) {
    list.push_back({{"from", e.link.cause},
                    {"to", e.link.effect},
                    {"provenance",
                     {{"user", e.provenance.user},
                      {"file", e.provenance.file},
                      {"iteration", e.provenance.iteration}}}});
  }
  return {{"excluded", list}};
}

PriorKnowledge PriorKnowledge::from_json(const nlohmann::json& j) {
  PriorKnowledge p;
  try {
    for (const auto& e : j.at("excluded")) {
      Provenance prov;
      if (e.contains("provenance")) {
        const auto& pj = e["provenance"];
        prov.user = pj.value("user", "");
        prov.file = pj.value("file", "");
        prov.iteration = pj.value("iteration", std::size_t{0});
      }
      p.add({e.at("from").get<std::string>(), e.at("to").get<std::string>()}, std::move(prov));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed prior knowledge: ") + e.what());
  }
  return p;
}

}  // namespace tcd

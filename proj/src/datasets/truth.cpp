#include <algorithm>
#include <fstream>

#include "tcd/datasets.hpp"

namespace tcd {

bool GroundTruth::contains(const std::string& cause, const std::string& effect) const {
  return std::any_of(edges.begin(), edges.end(), [&](const TruthEdge& e) {
    return e.cause == cause && e.effect == effect;
  });
}

void save_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  nlohmann::json j;
  j["schema"] = 1;
  j["edges"] = nlohmann::json::array();
  for (const TruthEdge& e : truth.edges) {
    nlohmann::json je{{"from", e.cause}, {"to", e.effect}};
    je["lag"] = e.lag ? nlohmann::json(*e.lag) : nlohmann::json(nullptr);
    j["edges"].push_back(std::move(je));
  }
  if (!truth.manifest.is_null()) j["generator"] = truth.manifest;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  GroundTruth truth;
  try {
    nlohmann::json j;
    in >> j;
    for (const auto& e : j.at("edges")) {
      TruthEdge te{e.at("from").get<std::string>(), e.at("to").get<std::string>(), std::nullopt};
      if (e.contains("lag") && !e["lag"].is_null()) te.lag = e["lag"].get<int>();
      truth.edges.push_back(std::move(te));
    }
    if (j.contains("generator")) truth.manifest = j["generator"];
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed truth file " + path.string() + ": " + e.what());
  }
  return truth;
}

void save_generated(const GeneratedData& data, const std::filesystem::path& dir) {
  save_dataset_dir(data.dataset, dir);
  save_truth(data.truth, dir / "truth.json");
}

}  // namespace tcd

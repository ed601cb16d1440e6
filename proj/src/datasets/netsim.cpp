#include <algorithm>
#include <fstream>
#include <regex>

#include "tcd/datasets.hpp"

namespace tcd {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  out.push_back(cell);
  return out;
}

bool numeric_row(const std::vector<std::string>& cells) {
  try {
    for (const auto& c : cells) parse_double(c);
  } catch (const ValidationError&) {
    return false;
  }
  return true;
}

}  // namespace

NetSimData load_netsim(const std::filesystem::path& dir) {
  const auto network_path = dir / "network.json";
  std::ifstream nin(network_path);
  if (!nin) throw ValidationError("missing " + network_path.string());
  std::size_t nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  try {
    nlohmann::json j;
    nin >> j;
    nodes = j.at("nodes").get<std::size_t>();
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ValidationError("network edge must be [i, j]");
      const auto a = e[0].get<std::size_t>(), b = e[1].get<std::size_t>();
      if (a >= nodes || b >= nodes) throw ValidationError("network edge references node outside 0.." + std::to_string(nodes - 1));
      edges.emplace_back(a, b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed " + network_path.string() + ": " + e.what());
  }
  if (nodes == 0) throw ValidationError("network has no nodes");

  NetSimData out;
  if (nodes != 5 && nodes != 10 && nodes != 15 && nodes != 50) {
    out.warnings.push_back("unusual NetSim node count " + std::to_string(nodes));
  }

  std::vector<std::pair<int, std::filesystem::path>> files;
  const std::regex pattern(R"(subject_(\d+)\.csv)");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string fname = entry.path().filename().string();
    if (std::regex_match(fname, m, pattern)) files.emplace_back(std::stoi(m[1]), entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no subject_<k>.csv files in " + dir.string());

  for (const auto& [k, path] : files) {
    std::ifstream in(path);
    std::string line;
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns(nodes);
    bool first = true;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split(line);
      if (cells.size() != nodes) {
        throw ValidationError(path.filename().string() + " has " + std::to_string(cells.size()) +
                              " columns but network.json declares " + std::to_string(nodes) + " nodes");
      }
      if (first && !numeric_row(cells)) {
        names = cells;
        first = false;
        continue;
      }
      first = false;
      for (std::size_t i = 0; i < nodes; ++i) columns[i].push_back(parse_double(cells[i]));
      ++row;
    }
    if (row == 0) throw ValidationError(path.filename().string() + " contains no samples");
    if (names.empty()) {
      for (std::size_t i = 0; i < nodes; ++i) names.push_back("N" + std::to_string(i + 1));
    }
    std::vector<VariableSpec> specs;
    for (const auto& nm : names) specs.push_back({nm, VariableKind::SeriesNumerical});
    GroundTruth truth;
    for (auto [a, b] : edges) truth.edges.push_back({names[a], names[b], 1});
    truth.manifest = {{"generator", "netsim"}, {"subject", k}, {"nodes", nodes}};
    out.subjects.push_back({Dataset(std::move(specs), std::move(columns)), std::move(truth)});
  }
  return out;
}

}  // namespace tcd

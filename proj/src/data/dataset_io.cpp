#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tcd/data.hpp"

namespace tcd {

namespace {

constexpr int kSchemaVersion = 1;

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

}  // namespace

std::string format_double(double v) {
  if (is_missing(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  if (text.empty()) return kMissing;
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("malformed number '" + std::string(text) + "'");
  }
  return v;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& csv_path,
                  const std::filesystem::path& schema_path) {
  nlohmann::json schema;
  schema["schema"] = kSchemaVersion;
  schema["samples"] = dataset.sample_count();
  schema["variables"] = nlohmann::json::array();
  for (const VariableSpec& s : dataset.specs()) {
    nlohmann::json v;
    v["name"] = s.name;
    v["kind"] = std::string(to_string(s.kind));
    v["roles"] = nlohmann::json::array();
    if (s.source) v["roles"].push_back("source");
    if (s.target) v["roles"].push_back("target");
    if (is_categorical(s.kind)) v["category_count"] = s.category_count;
    schema["variables"].push_back(std::move(v));
  }
  std::ofstream js(schema_path);
  if (!js) throw std::runtime_error("cannot write " + schema_path.string());
  js << schema.dump(2) << '\n';

  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  for (std::size_t i = 0; i < dataset.variable_count(); ++i) {
    if (i) csv << ',';
    csv << dataset.spec(i).name;
  }
  csv << '\n';
  const std::size_t rows = std::max<std::size_t>(dataset.sample_count(), 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < dataset.variable_count(); ++i) {
      if (i) csv << ',';
      auto v = dataset.values(i);
      if (r < v.size()) csv << format_double(v[r]);
    }
    csv << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& schema_path) {
  std::ifstream js(schema_path);
  if (!js) throw ValidationError("cannot read schema " + schema_path.string());
  nlohmann::json schema;
  try {
    js >> schema;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed schema " + schema_path.string() + ": " + e.what());
  }
  std::vector<VariableSpec> specs;
  std::size_t samples = 0;
  try {
    if (schema.at("schema").get<int>() != kSchemaVersion) {
      throw ValidationError("unsupported dataset schema version");
    }
    samples = schema.at("samples").get<std::size_t>();
    for (const auto& v : schema.at("variables")) {
      VariableSpec s;
      s.name = v.at("name").get<std::string>();
      s.kind = parse_kind(v.at("kind").get<std::string>());
      s.category_count = v.value("category_count", 0);
      s.source = s.target = false;
      for (const auto& role : v.at("roles")) {
        const auto r = role.get<std::string>();
        if (r == "source") s.source = true;
        else if (r == "target") s.target = true;
        else throw ValidationError("unknown role '" + r + "'");
      }
      specs.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed schema " + schema_path.string() + ": " + e.what());
  }

  std::ifstream csv(csv_path);
  if (!csv) throw ValidationError("cannot read " + csv_path.string());
  std::string line;
  if (!std::getline(csv, line)) throw ValidationError("empty CSV " + csv_path.string());
  const auto header = split_row(line);
  if (header.size() != specs.size()) {
    throw ValidationError("CSV has " + std::to_string(header.size()) + " columns, schema lists " +
                          std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (header[i] != specs[i].name) {
      throw ValidationError("CSV column '" + std::string(header[i]) + "' does not match schema '" +
                            specs[i].name + "'");
    }
  }
  std::vector<std::vector<double>> values(specs.size());
  std::size_t row = 0;
  while (std::getline(csv, line)) {
    const auto cells = split_row(line);
    if (cells.size() != specs.size()) {
      throw ValidationError("CSV row " + std::to_string(row + 2) + " has " +
                            std::to_string(cells.size()) + " cells");
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const double v = parse_double(cells[i]);
      if (is_static(specs[i].kind)) {
        if (row == 0) values[i].push_back(v);
        else if (!is_missing(v)) {
          throw ValidationError("static variable '" + specs[i].name + "' has values past row 1");
        }
      } else {
        values[i].push_back(v);
      }
    }
    ++row;
  }
  const std::size_t expected_rows = std::max<std::size_t>(samples, 1);
  if (row != expected_rows) {
    throw ValidationError("CSV has " + std::to_string(row) + " data rows, schema declares " +
                          std::to_string(samples) + " samples");
  }
  return Dataset(std::move(specs), std::move(values));
}

void save_dataset_dir(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(dataset, dir / "data.csv", dir / "schema.json");
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  return load_dataset(dir / "data.csv", dir / "schema.json");
}

}  // namespace tcd

#include <bit>
#include <cstring>
#include <fstream>

#include "tcd/forecaster.hpp"

namespace tcd {

namespace {

constexpr char kMagic[8] = {'T', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(const Forecaster& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "tcd-checkpoint";
  header["version"] = kVersion;
  header["config"] = model.config().to_json();
  header["variables"] = nlohmann::json::array();
  for (const auto& s : model.specs()) {
    header["variables"].push_back({{"name", s.name},
                                   {"kind", std::string(to_string(s.kind))},
                                   {"category_count", s.category_count},
                                   {"source", s.source},
                                   {"target", s.target}});
  }
  header["normalizer"] = nlohmann::json::object();
  for (const auto& [name, r] : model.normalizer().ranges()) {
    // Bit patterns keep the round trip exact regardless of decimal formatting.
    header["normalizer"][name] = {{"p5", std::bit_cast<std::uint64_t>(r.p5)},
                                  {"p95", std::bit_cast<std::uint64_t>(r.p95)},
                                  {"degenerate", r.degenerate}};
  }
  header["exclusions"] = to_json(model.exclusions());
  const auto& tel = model.telemetry();
  nlohmann::json losses = nlohmann::json::array();
  for (double v : tel.epoch_losses) losses.push_back(std::bit_cast<std::uint64_t>(v));
  header["telemetry"] = {{"epoch_losses_bits", losses}, {"windows", tel.windows}, {"steps", tel.steps}};
  const ParameterStore& params = model.parameters();
  header["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    header["parameters"].push_back({{"name", params.name(i)}, {"shape", params.value(i).shape()}});
  }

  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto data = params.value(i).data();
      out.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Forecaster load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ValidationError(path.string() + " is not a checkpoint");
  }
  const std::uint64_t len = read_u64(in);
  if (!in || len > (std::uint64_t{1} << 32)) throw ValidationError("corrupt checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("truncated checkpoint header");

  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("version").get<int>() != kVersion) {
      throw ValidationError("unsupported checkpoint version " + header.at("version").dump());
    }
    std::vector<VariableSpec> specs;
    for (const auto& v : header.at("variables")) {
      VariableSpec s;
      s.name = v.at("name").get<std::string>();
      s.kind = parse_kind(v.at("kind").get<std::string>());
      s.category_count = v.at("category_count").get<int>();
      s.source = v.at("source").get<bool>();
      s.target = v.at("target").get<bool>();
      specs.push_back(std::move(s));
    }
    std::map<std::string, Normalizer::Range> ranges;
    for (const auto& [name, r] : header.at("normalizer").items()) {
      ranges[name] = {std::bit_cast<double>(r.at("p5").get<std::uint64_t>()),
                      std::bit_cast<double>(r.at("p95").get<std::uint64_t>()),
                      r.at("degenerate").get<bool>()};
    }
    Forecaster model(std::move(specs), ModelConfig::from_json(header.at("config")),
                     Normalizer(std::move(ranges)), exclusions_from_json(header.at("exclusions")));
    auto& tel = model.telemetry();
    for (const auto& b : header.at("telemetry").at("epoch_losses_bits")) {
      tel.epoch_losses.push_back(std::bit_cast<double>(b.get<std::uint64_t>()));
    }
    tel.windows = header.at("telemetry").at("windows").get<std::size_t>();
    tel.steps = header.at("telemetry").at("steps").get<std::size_t>();

    ParameterStore& params = model.parameters();
    const auto& table = header.at("parameters");
    if (table.size() != params.size()) throw ValidationError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto name = table[i].at("name").get<std::string>();
      const auto shape = table[i].at("shape").get<std::vector<std::size_t>>();
      Tensor& t = params.value(i);
      if (name != params.name(i) || shape != t.shape()) {
        throw ValidationError("checkpoint parameter '" + name + "' does not match the architecture");
      }
      in.read(reinterpret_cast<char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw ValidationError("truncated checkpoint data");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint header: " + std::string(e.what()));
  }
}

}  // namespace tcd

#include "tcd/orchestrator.hpp"

namespace tcd {

namespace {

void only_keys(const nlohmann::json& ref, std::initializer_list<const char*> keys) {
  for (const auto& [key, _] : ref.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw ValidationError("unknown dataset field '" + key + "'");
  }
}

MotifConfig motif_config(const nlohmann::json& ref) {
  MotifConfig c;
  c.kind = parse_motif(ref.at("motif").get<std::string>());
  c.seed = ref.value("seed", std::uint64_t{0});
  c.length = ref.value("length", c.length);
  c.noise_std = ref.value("noise_std", c.noise_std);
  return c;
}

Lorenz96Config lorenz_config(const nlohmann::json& ref) {
  Lorenz96Config c;
  c.seed = ref.value("seed", std::uint64_t{0});
  c.variables = ref.value("variables", c.variables);
  c.samples = ref.value("samples", c.samples);
  if (ref.contains("forcing")) c.forcing = ref["forcing"].get<double>();
  return c;
}

}  // namespace

void validate_dataset_ref(const nlohmann::json& ref) {
  try {
    if (!ref.is_object()) throw ValidationError("dataset reference must be an object");
    const auto kind = ref.at("kind").get<std::string>();
    if (kind == "motif") {
      only_keys(ref, {"kind", "motif", "seed", "length", "noise_std"});
      motif_config(ref).validate();
    } else if (kind == "lorenz96") {
      only_keys(ref, {"kind", "seed", "variables", "samples", "forcing"});
      lorenz_config(ref).validate();
    } else if (kind == "directory") {
      only_keys(ref, {"kind", "path"});
      ref.at("path").get<std::string>();
    } else if (kind == "netsim") {
      only_keys(ref, {"kind", "path", "subject"});
      ref.at("path").get<std::string>();
      ref.value("subject", std::size_t{0});
    } else {
      throw ValidationError("unknown dataset kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed dataset reference: ") + e.what());
  }
}

ResolvedDataset resolve_dataset(const nlohmann::json& ref) {
  try {
    validate_dataset_ref(ref);
  } catch (const ValidationError& e) {
    throw DatasetError(e.what());
  }
  const auto kind = ref.at("kind").get<std::string>();
  try {
    if (kind == "motif") {
      auto g = gen_motif(motif_config(ref));
      return {std::move(g.dataset), std::move(g.truth)};
    }
    if (kind == "lorenz96") {
      auto g = simulate_lorenz96(lorenz_config(ref));
      return {std::move(g.dataset), std::move(g.truth)};
    }
    const std::filesystem::path path = ref.at("path").get<std::string>();
    if (kind == "directory") {
      if (!std::filesystem::is_directory(path)) throw DatasetError("no dataset directory " + path.string());
      ResolvedDataset out{load_dataset_dir(path), std::nullopt};
      if (std::filesystem::exists(path / "truth.json")) out.truth = load_truth(path / "truth.json");
      return out;
    }
    auto data = load_netsim(path);
    const auto subject = ref.value("subject", std::size_t{0});
    if (subject >= data.subjects.size()) {
      throw DatasetError("subject " + std::to_string(subject) + " out of range");
    }
    return {std::move(data.subjects[subject].dataset), std::move(data.subjects[subject].truth)};
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw DatasetError(e.what());
  }
}

}  // namespace tcd

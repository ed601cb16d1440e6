#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "tcd/orchestrator.hpp"

namespace tcd {

namespace fs = std::filesystem;

namespace {

std::string format_id(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04zu", prefix, n);
  return buf;
}

// "run-0012" -> 12; anything else -> 0.
std::size_t id_number(const std::string& id, const std::string& prefix) {
  if (id.rfind(prefix + "-", 0) != 0) return 0;
  try {
    return std::stoul(id.substr(prefix.size() + 1));
  } catch (const std::exception&) {
    return 0;
  }
}

nlohmann::json parse_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw StateError("corrupt state file " + path.string() + ": " + e.what());
  }
}

nlohmann::json telemetry_json(const TrainingTelemetry& t) {
  return {{"epoch_losses", t.epoch_losses}, {"windows", t.windows}, {"steps", t.steps}};
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

void RunRequest::validate() const {
  validate_dataset_ref(dataset);
  model.validate();
  extraction.validate();
}

nlohmann::json RunRequest::to_json() const {
  return {{"schema", 1},
          {"dataset", dataset},
          {"model", model.to_json()},
          {"extraction", extraction.to_json()},
          {"prior", prior.to_json()}};
}

RunRequest RunRequest::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("run request must be an object");
  RunRequest r;
  for (const auto& [key, _] : j.items()) {
    static const char* known[] = {"schema", "request_id", "dataset", "model", "extraction",
                                  "exclusions", "prior", "user", "file"};
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ValidationError("unknown run request field '" + key + "'");
    }
  }
  if (!j.contains("dataset")) throw ValidationError("run request needs a dataset");
  r.dataset = j["dataset"];
  if (j.contains("model")) r.model = ModelConfig::from_json(j["model"]);
  if (j.contains("extraction")) r.extraction = ExtractionConfig::from_json(j["extraction"]);
  if (j.contains("prior")) r.prior = PriorKnowledge::from_json(j["prior"]);
  if (j.contains("exclusions")) {
    Provenance prov{j.value("user", ""), j.value("file", ""), 0};
    for (auto& e : exclusions_from_json(j["exclusions"])) r.prior.add(std::move(e), prov);
  }
  r.validate();
  return r;
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json j;
  j["schema"] = 1;
  j["id"] = id;
  j["parent"] = parent ? nlohmann::json(*parent) : nlohmann::json(nullptr);
  j["status"] = ok() ? "complete" : "failed";
  j["dataset"] = dataset;
  j["model"] = model.to_json();
  j["extraction"] = extraction.to_json();
  j["prior"] = prior.to_json();
  j["checkpoint"] = checkpoint ? nlohmann::json(*checkpoint) : nlohmann::json(nullptr);
  j["graph"] = graph ? graph->to_json() : nlohmann::json(nullptr);
  j["evaluation"] = evaluation ? *evaluation : nlohmann::json(nullptr);
  j["telemetry"] = telemetry ? telemetry_json(*telemetry) : nlohmann::json(nullptr);
  j["error"] = error ? nlohmann::json{{"stage", error->stage}, {"message", error->message}} : nlohmann::json(nullptr);
  j["created"] = created;
  j["finished"] = finished;
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    if (!j.at("parent").is_null()) r.parent = j["parent"].get<std::string>();
    r.dataset = j.at("dataset");
    r.model = ModelConfig::from_json(j.at("model"));
    r.extraction = ExtractionConfig::from_json(j.at("extraction"));
    r.prior = PriorKnowledge::from_json(j.at("prior"));
    if (!j.at("checkpoint").is_null()) r.checkpoint = j["checkpoint"].get<std::string>();
    if (!j.at("graph").is_null()) r.graph = CausalGraph::from_json(j["graph"]);
    if (!j.at("evaluation").is_null()) r.evaluation = j["evaluation"];
    if (!j.at("telemetry").is_null()) {
      TrainingTelemetry t;
      t.epoch_losses = j["telemetry"].at("epoch_losses").get<std::vector<double>>();
      t.windows = j["telemetry"].at("windows").get<std::size_t>();
      t.steps = j["telemetry"].at("steps").get<std::size_t>();
      r.telemetry = std::move(t);
    }
    if (!j.at("error").is_null()) {
      r.error = StageError{j["error"].at("stage").get<std::string>(), j["error"].at("message").get<std::string>()};
    }
    r.created = j.at("created").get<std::string>();
    r.finished = j.at("finished").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed run record: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------

StateStore::StateStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "runs", ec);
  fs::create_directories(root_ / "jobs", ec);
  if (ec || !fs::is_directory(root_ / "runs") || !fs::is_directory(root_ / "jobs")) {
    throw StateError("cannot create state directory " + root_.string());
  }
  for (const auto& entry : fs::directory_iterator(root_ / "runs")) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory()) throw StateError("unexpected file in runs/: " + name);
    const fs::path rec = entry.path() / "record.json";
    if (!fs::exists(rec)) throw StateError("run " + name + " has no record.json");
    try {
      const auto r = RunRecord::from_json(parse_file(rec));
      if (r.id != name) throw StateError("run directory " + name + " holds record " + r.id);
    } catch (const ValidationError& e) {
      throw StateError("run " + name + ": " + e.what());
    }
    next_run_ = std::max(next_run_, id_number(name, "run") + 1);
  }
  for (const auto& entry : fs::directory_iterator(root_ / "jobs")) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() == ".tmp") {
      fs::remove(entry.path(), ec);
      continue;
    }
    const auto j = parse_file(entry.path());
    if (!j.is_object() || !j.contains("id") || !j.contains("status") || !j["id"].is_string() ||
        j["id"].get<std::string>() + ".json" != name) {
      throw StateError("corrupt job record " + name);
    }
    next_job_ = std::max(next_job_, id_number(j["id"].get<std::string>(), "job") + 1);
    if (j.contains("run_id") && j["run_id"].is_string()) {
      next_run_ = std::max(next_run_, id_number(j["run_id"].get<std::string>(), "run") + 1);
    }
  }
}

fs::path StateStore::run_dir(const std::string& id) const { return root_ / "runs" / id; }
fs::path StateStore::job_path(const std::string& id) const { return root_ / "jobs" / (id + ".json"); }

std::string StateStore::allocate_run_id() {
  std::lock_guard lock(mutex_);
  return format_id("run", next_run_++);
}

std::string StateStore::allocate_job_id() {
  std::lock_guard lock(mutex_);
  return format_id("job", next_job_++);
}

bool StateStore::has_run(const std::string& id) const {
  if (id.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos) return false;
  return fs::exists(run_dir(id) / "record.json");
}

RunRecord StateStore::load_run(const std::string& id) const {
  if (!has_run(id)) throw NotFound("no run " + id);
  return RunRecord::from_json(parse_file(run_dir(id) / "record.json"));
}

std::vector<std::string> StateStore::run_ids() const {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root_ / "runs")) {
    if (fs::exists(entry.path() / "record.json")) out.push_back(entry.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void StateStore::save_run(const RunRecord& record) {
  // record.json last: its presence marks the run as complete on disk.
  write_file_atomic(run_dir(record.id) / "record.json", record.to_json().dump(2));
}

std::string StateStore::read_graph(const std::string& id) const {
  if (!has_run(id)) throw NotFound("no run " + id);
  const fs::path p = run_dir(id) / "graph.json";
  if (!fs::exists(p)) throw NotFound("run " + id + " has no graph");
  return read_file(p);
}

nlohmann::json StateStore::read_gradients(const std::string& id) const {
  if (!has_run(id)) throw NotFound("no run " + id);
  const fs::path p = run_dir(id) / "gradients.json";
  if (!fs::exists(p)) throw NotFound("run " + id + " has no gradients");
  return parse_file(p);
}

std::vector<nlohmann::json> StateStore::load_jobs() const {
  std::vector<nlohmann::json> out;
  for (const auto& entry : fs::directory_iterator(root_ / "jobs")) {
    if (entry.path().extension() == ".json") out.push_back(parse_file(entry.path()));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a["id"] < b["id"]; });
  return out;
}

void StateStore::save_job(const nlohmann::json& job) {
  write_file_atomic(job_path(job.at("id").get<std::string>()), job.dump(2));
}

}  // namespace tcd

#include "tcd/service.hpp"

#include <httplib.h>

#include <algorithm>

namespace tcd {

// ---------------------------------------------------------------------------
// Jobs

ExclusionRequest exclusion_request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("exclusion request must be an object");
  ExclusionRequest r;
  for (const auto& [key, _] : j.items()) {
    if (key != "schema" && key != "request_id" && key != "exclusions" && key != "user" && key != "file" &&
        key != "reset") {
      throw ValidationError("unknown exclusion request field '" + key + "'");
    }
  }
  if (!j.contains("exclusions") || !j["exclusions"].is_array()) {
    throw ValidationError("exclusion request needs an 'exclusions' list");
  }
  r.links = exclusions_from_json(j["exclusions"]);
  try {
    r.user = j.value("user", "");
    r.file = j.value("file", "");
    r.reset = j.value("reset", false);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed exclusion request: ") + e.what());
  }
  return r;
}

RunRecord JobQueue::default_runner(StateStore& store, const nlohmann::json& job) {
  const auto run_id = job.at("run_id").get<std::string>();
  if (job.at("kind") == "pipeline") {
    return run_pipeline(store, RunRequest::from_json(job.at("request")), run_id);
  }
  return apply_exclusions(store, job.at("parent").get<std::string>(),
                          exclusion_request_from_json(job.at("request")), run_id);
}

JobQueue::JobQueue(StateStore& store, Runner runner)
    : store_(store), runner_(runner ? std::move(runner) : Runner(default_runner)) {
  for (auto& job : store_.load_jobs()) {
    const std::string id = job.at("id").get<std::string>();
    const std::string status = job.at("status").get<std::string>();
    if (status == "queued" || status == "running") {
      job["status"] = "queued";
      queue_.push_back(id);
    }
    jobs_[id] = std::move(job);
  }
}

JobQueue::~JobQueue() { stop(); }

void JobQueue::start() {
  std::lock_guard lock(mutex_);
  if (thread_.joinable()) return;
  stopping_ = false;
  thread_ = std::thread([this] { worker(); });
}

void JobQueue::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void JobQueue::save(nlohmann::json& job) {
  job["updated"] = utc_timestamp();
  store_.save_job(job);
}

nlohmann::json JobQueue::with_position(const nlohmann::json& job) const {
  nlohmann::json out = job;
  const auto id = job.at("id").get<std::string>();
  out["queue_position"] = nullptr;
  if (running_ && *running_ == id) out["queue_position"] = 0;
  const auto it = std::find(queue_.begin(), queue_.end(), id);
  if (it != queue_.end()) out["queue_position"] = (it - queue_.begin()) + (running_ ? 1 : 0);
  return out;
}

nlohmann::json JobQueue::submit(const std::string& kind, const nlohmann::json& request,
                                std::optional<std::string> parent) {
  std::unique_lock lock(mutex_);
  std::optional<std::string> request_id;
  if (request.is_object() && request.contains("request_id")) {
    if (!request["request_id"].is_string()) throw ValidationError("request_id must be a string");
    request_id = request["request_id"].get<std::string>();
    for (const auto& [_, job] : jobs_) {
      if (job.value("request_id", nlohmann::json()) == *request_id) return with_position(job);
    }
  }
  if (running_ || !queue_.empty()) {
    const std::string active = running_ ? *running_ : queue_.front();
    throw QueueBusy(active, queue_.size() + (running_ ? 1 : 0));
  }
  if (kind == "pipeline") {
    RunRequest::from_json(request);
  } else if (kind == "exclusions") {
    if (!parent) throw ValidationError("exclusion job needs a parent run");
    child_request(store_, *parent, exclusion_request_from_json(request));
  } else {
    throw ValidationError("unknown job kind '" + kind + "'");
  }
  nlohmann::json job{{"schema", 1},
                     {"id", store_.allocate_job_id()},
                     {"kind", kind},
                     {"request", request},
                     {"request_id", request_id ? nlohmann::json(*request_id) : nlohmann::json(nullptr)},
                     {"parent", parent ? nlohmann::json(*parent) : nlohmann::json(nullptr)},
                     {"run_id", store_.allocate_run_id()},
                     {"status", "queued"},
                     {"error", nullptr},
                     {"created", utc_timestamp()}};
  save(job);
  const std::string id = job["id"];
  jobs_[id] = job;
  queue_.push_back(id);
  lock.unlock();
  cv_.notify_all();
  std::lock_guard again(mutex_);
  return with_position(jobs_.at(id));
}

std::optional<nlohmann::json> JobQueue::status(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return with_position(it->second);
}

bool JobQueue::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [this] { return !running_ && queue_.empty(); });
}

void JobQueue::worker() {
  std::unique_lock lock(mutex_);
  while (true) {
    cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
    if (stopping_) return;
    const std::string id = queue_.front();
    queue_.pop_front();
    running_ = id;
    nlohmann::json& job = jobs_.at(id);
    job["status"] = "running";
    save(job);
    const nlohmann::json snapshot = job;
    lock.unlock();

    nlohmann::json error = nullptr;
    try {
      const RunRecord rec = runner_(store_, snapshot);
      if (rec.error) error = {{"stage", rec.error->stage}, {"message", rec.error->message}};
    } catch (const std::exception& e) {
      error = {{"stage", "job"}, {"message", e.what()}};
    }

    lock.lock();
    nlohmann::json& done = jobs_.at(id);
    done["status"] = error.is_null() ? "succeeded" : "failed";
    done["error"] = error;
    try {
      save(done);
    } catch (const std::exception&) {
      // Kept in memory; a restart reruns the job.
    }
    running_.reset();
    cv_.notify_all();
  }
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                nlohmann::json extra = nlohmann::json::object()) {
  extra["schema"] = 1;
  extra["error"] = {{"code", code}, {"message", message}};
  send_json(res, status, extra);
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("request body is not JSON: ") + e.what());
  }
}

nlohmann::json run_summary(const RunRecord& r) {
  nlohmann::json s{{"id", r.id},
                   {"parent", r.parent ? nlohmann::json(*r.parent) : nlohmann::json(nullptr)},
                   {"status", r.ok() ? "complete" : "failed"},
                   {"dataset", r.dataset},
                   {"created", r.created},
                   {"finished", r.finished},
                   {"excluded", r.prior.entries().size()},
                   {"edges", r.graph ? nlohmann::json(r.graph->edges.size()) : nlohmann::json(nullptr)}};
  s["f1"] = r.evaluation ? (*r.evaluation)["f1"]["mean"] : nlohmann::json(nullptr);
  return s;
}

}  // namespace

ApiServer::ApiServer(StateStore& store, JobQueue& queue)
    : store_(store), queue_(queue), http_(std::make_unique<httplib::Server>()) {
  auto& s = *http_;

  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const QueueBusy& e) {
      send_error(res, 409, "queue_busy", e.what(),
                 {{"queue_position", e.queue_position}, {"active_job", e.active_job}});
    } catch (const ValidationError& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const NotFound& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  });

  s.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& id : store_.run_ids()) list.push_back(run_summary(store_.load_run(id)));
    send_json(res, 200, {{"schema", 1}, {"runs", list}});
  });

  s.Get(R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, store_.load_run(req.matches[1]).to_json());
  });

  s.Get(R"(/runs/([^/]+)/graph)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const RunRecord rec = store_.load_run(id);
    const std::string text = store_.read_graph(id);
    const CausalGraph g = CausalGraph::from_json(nlohmann::json::parse(text));
    for (const auto& e : g.edges) {
      if (rec.prior.contains({e.cause, e.effect})) {
        throw std::runtime_error("stored graph of " + id + " contains excluded edge " + e.cause + " -> " + e.effect);
      }
    }
    res.set_content(text, "application/json");
  });

  s.Get(R"(/runs/([^/]+)/gradients/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1], target = req.matches[2];
    const auto all = store_.read_gradients(id);
    const auto& targets = all.at("targets");
    if (!targets.contains(target)) throw NotFound("run " + id + " has no gradients for target '" + target + "'");
    send_json(res, 200, targets[target]);
  });

  s.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) {
    const auto job = queue_.submit("pipeline", parse_body(req));
    send_json(res, 202, {{"schema", 1}, {"job_id", job["id"]}, {"run_id", job["run_id"]}, {"status", job["status"]}});
  });

  s.Post(R"(/runs/([^/]+)/exclusions)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string parent = req.matches[1];
    if (!store_.has_run(parent)) throw NotFound("no run " + parent);
    const auto job = queue_.submit("exclusions", parse_body(req), parent);
    send_json(res, 202, {{"schema", 1}, {"job_id", job["id"]}, {"run_id", job["run_id"]}, {"status", job["status"]}});
  });

  s.Get(R"(/jobs/([^/]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto job = queue_.status(req.matches[1]);
    if (!job) throw NotFound("no job " + std::string(req.matches[1]));
    send_json(res, 200,
              {{"schema", 1},
               {"id", (*job)["id"]},
               {"kind", (*job)["kind"]},
               {"status", (*job)["status"]},
               {"run_id", (*job)["run_id"]},
               {"parent", (*job)["parent"]},
               {"queue_position", (*job)["queue_position"]},
               {"error", (*job)["error"]}});
  });
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = http_->bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!http_->bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
  }
  return port;
}

void ApiServer::listen() { http_->listen_after_bind(); }

void ApiServer::stop() {
  if (http_) http_->stop();
}

}  // namespace tcd

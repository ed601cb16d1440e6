#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "tcd/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace tcd {

class QueueBusy : public std::runtime_error {
 public:
  QueueBusy(std::string active_job, std::size_t queue_position)
      : std::runtime_error("a job is already pending"),
        active_job(std::move(active_job)),
        queue_position(queue_position) {}
  std::string active_job;
  std::size_t queue_position;
};

ExclusionRequest exclusion_request_from_json(const nlohmann::json& j);

/// Serialized training jobs with at most one pending at a time. Job records
/// are persisted on every transition; unfinished ones are rerun on start.
class JobQueue {
 public:
  /// Executes one job record and returns the finished run.
  using Runner = std::function<RunRecord(StateStore&, const nlohmann::json& job)>;

  explicit JobQueue(StateStore& store, Runner runner = {});
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  void start();
  void stop();

  /// kind is "pipeline" (request = run request) or "exclusions" (request =
  /// exclusion request, parent = run id). Validates before queueing; a
  /// repeated request_id returns the original job. Throws QueueBusy,
  /// ValidationError or NotFound.
  nlohmann::json submit(const std::string& kind, const nlohmann::json& request,
                        std::optional<std::string> parent = {});

  std::optional<nlohmann::json> status(const std::string& id) const;
  bool wait_idle(std::chrono::milliseconds timeout);

  static RunRecord default_runner(StateStore& store, const nlohmann::json& job);

 private:
  void worker();
  void save(nlohmann::json& job);
  nlohmann::json with_position(const nlohmann::json& job) const;

  StateStore& store_;
  Runner runner_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::string, nlohmann::json> jobs_;
  std::deque<std::string> queue_;
  std::optional<std::string> running_;
  bool stopping_ = false;
  std::thread thread_;
};

class ApiServer {
 public:
  ApiServer(StateStore& store, JobQueue& queue);
  ~ApiServer();

  /// Returns the bound port; throws std::runtime_error when busy.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  StateStore& store_;
  JobQueue& queue_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace tcd

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>
#include <thread>

#include "tcd/service.hpp"

// After Eigen: resolv.h defines a macro named _res.
#include <httplib.h>

using namespace tcd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("tcd-orch-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

nlohmann::json fork_ref(std::uint64_t seed = 1) {
  return {{"kind", "motif"}, {"motif", "fork"}, {"seed", seed}, {"length", 80}};
}

ModelConfig small_model() {
  ModelConfig c;
  c.embed = 8;
  c.heads = 2;
  c.layers = 1;
  c.category_embed = 2;
  c.epochs = 3;
  c.seed = 4;
  return c;
}

RunRequest small_request(nlohmann::json ref = fork_ref()) {
  RunRequest r;
  r.dataset = std::move(ref);
  r.model = small_model();
  return r;
}

bool column_zero(const nlohmann::json& grad, const std::string& source) {
  const auto& cols = grad["columns"];
  std::size_t idx = 0;
  while (cols[idx] != source) ++idx;
  for (const auto& row : grad["raw"]) {
    if (row[idx].get<double>() != 0.0) return false;
  }
  return true;
}

// Runs `job` only after `release` is set, so queue states can be observed.
struct Gate {
  std::promise<void> release;
  std::shared_future<void> opened{release.get_future().share()};
  JobQueue::Runner runner() {
    auto f = opened;
    return [f](StateStore& s, const nlohmann::json& job) {
      f.wait();
      return JobQueue::default_runner(s, job);
    };
  }
};

}  // namespace

TEST_SUITE("prior knowledge") {
  TEST_CASE("entries are unique and validated against the specs") {
    PriorKnowledge p;
    p.add({"V1", "V2"}, {"ana", "", 1});
    CHECK_THROWS_AS(p.add({"V1", "V2"}, {"bob", "", 2}), ValidationError);
    std::vector<VariableSpec> specs{{"V1", VariableKind::SeriesNumerical}, {"V2", VariableKind::SeriesNumerical}};
    CHECK_NOTHROW(p.validate(specs));
    specs[1].target = false;
    CHECK_THROWS_AS(p.validate(specs), ValidationError);
    PriorKnowledge q;
    q.add({"V9", "V1"}, {});
    CHECK_THROWS_AS(q.validate(specs), ValidationError);
  }

  TEST_CASE("json round trip keeps provenance") {
    PriorKnowledge p;
    p.add({"A", "B"}, {"ana", "prior.json", 2});
    p.add({"C", "B"}, {"bob", "", 3});
    const auto back = PriorKnowledge::from_json(nlohmann::json::parse(p.to_json().dump()));
    CHECK(back == p);
    CHECK(back.max_iteration() == 3);
    CHECK_THROWS_AS(PriorKnowledge::from_json({{"excluded", {{{"from", "A"}}}}}), ValidationError);
  }
}

TEST_SUITE("requests") {
  TEST_CASE("run request parsing") {
    const nlohmann::json body{{"dataset", fork_ref()},
                              {"model", {{"embed", 8}, {"heads", 2}}},
                              {"extraction", {{"tau", 0.2}}},
                              {"exclusions", {{{"from", "V1"}, {"to", "V2"}}}},
                              {"user", "ana"}};
    const auto r = RunRequest::from_json(body);
    CHECK(r.model.embed == 8);
    CHECK(r.extraction.tau == 0.2);
    REQUIRE(r.prior.entries().size() == 1);
    CHECK(r.prior.entries()[0].provenance.user == "ana");
    CHECK_THROWS_AS(RunRequest::from_json({{"model", nlohmann::json::object()}}), ValidationError);
    CHECK_THROWS_AS(RunRequest::from_json({{"dataset", fork_ref()}, {"colour", 1}}), ValidationError);
    CHECK_THROWS_AS(RunRequest::from_json({{"dataset", {{"kind", "mystery"}}}}), ValidationError);
    CHECK_THROWS_AS(RunRequest::from_json({{"dataset", fork_ref()}, {"model", {{"heads", 7}}}}), ValidationError);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("complete run is persisted and deterministic") {
    TempDir dir;
    StateStore store(dir.path);
    const auto rec = run_pipeline(store, small_request());
    REQUIRE(rec.ok());
    CHECK(rec.id == "run-0001");
    REQUIRE(rec.graph.has_value());
    REQUIRE(rec.evaluation.has_value());
    CHECK((*rec.evaluation)["runs"].size() == 1);
    CHECK(rec.telemetry->epoch_losses.size() == 3);
    for (const char* f : {"record.json", "checkpoint.bin", "graph.json", "gradients.json", "dataset/data.csv",
                          "dataset/schema.json", "dataset/truth.json"}) {
      CHECK(fs::exists(store.run_dir(rec.id) / f));
    }
    const auto loaded = store.load_run(rec.id);
    CHECK(loaded.to_json() == rec.to_json());

    const auto again = run_pipeline(store, small_request());
    CHECK(again.id == "run-0002");
    CHECK(store.read_graph(again.id) == store.read_graph(rec.id));
  }

  TEST_CASE("re-extraction reproduces the stored graph byte for byte") {
    TempDir dir;
    StateStore store(dir.path);
    const auto rec = run_pipeline(store, small_request());
    REQUIRE(rec.ok());
    CHECK(reextract(store, rec.id).to_json().dump(2) == store.read_graph(rec.id));
  }

  TEST_CASE("stage failures are recorded") {
    TempDir dir;
    StateStore store(dir.path);
    const auto missing = run_pipeline(store, small_request({{"kind", "directory"}, {"path", "/nonexistent/tcd"}}));
    REQUIRE(missing.error.has_value());
    CHECK(missing.error->stage == "dataset");
    CHECK(store.load_run(missing.id).error->stage == "dataset");

    auto bad_prior = small_request();
    bad_prior.prior.add({"V9", "V1"}, {});
    CHECK(run_pipeline(store, bad_prior).error->stage == "prior");

    auto diverge = small_request();
    diverge.model.learning_rate = 1e300;
    const auto d = run_pipeline(store, diverge);
    REQUIRE(d.error.has_value());
    CHECK(d.error->stage == "train");
    CHECK_FALSE(d.checkpoint.has_value());
  }

  TEST_CASE("excluding an edge removes it and zeroes its column") {
    TempDir dir;
    StateStore store(dir.path);
    auto req = small_request();
    req.extraction.tau = 0.0;  // every non-zero column becomes an edge
    const auto parent = run_pipeline(store, req);
    REQUIRE(parent.ok());
    REQUIRE(parent.graph->contains("V2", "V3"));
    const auto child = apply_exclusions(store, parent.id, {{{"V2", "V3"}}, "ana", "", false});
    REQUIRE(child.ok());
    CHECK(child.parent == parent.id);
    CHECK_FALSE(child.graph->contains("V2", "V3"));
    CHECK(child.graph->contains("V1", "V3"));
    CHECK(column_zero(store.read_gradients(child.id)["targets"]["V3"], "V2"));
    CHECK_FALSE(column_zero(store.read_gradients(parent.id)["targets"]["V3"], "V2"));
  }

  TEST_CASE("refinement chains nest their exclusion sets") {
    TempDir dir;
    StateStore store(dir.path);
    std::string id = run_pipeline(store, small_request()).id;
    const std::vector<Exclusion> steps{{"V2", "V3"}, {"V3", "V2"}, {"V1", "V1"}};
    for (const auto& link : steps) id = apply_exclusions(store, id, {{link}, "ana", "", false}).id;

    // Walk back to the root through the persisted records.
    std::vector<RunRecord> chain;
    for (std::optional<std::string> cur = id; cur; cur = chain.back().parent) chain.push_back(store.load_run(*cur));
    REQUIRE(chain.size() == 4);
    for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
      const auto& child = chain[k].prior;
      const auto& parent = chain[k + 1].prior;
      for (const auto& e : parent.entries()) CHECK(child.contains(e.link));
      CHECK(child.entries().size() == parent.entries().size() + 1);
      CHECK(child.max_iteration() == parent.max_iteration() + 1);
      for (const auto& e : child.entries()) CHECK_FALSE(chain[k].graph->contains(e.link.cause, e.link.effect));
    }
    CHECK(chain[0].prior.entries()[2].provenance.iteration == 3);
  }

  TEST_CASE("an empty exclusion set reproduces the parent") {
    TempDir dir;
    StateStore store(dir.path);
    const auto parent = run_pipeline(store, small_request());
    const auto child = apply_exclusions(store, parent.id, {});
    REQUIRE(child.ok());
    CHECK(store.read_graph(child.id) == store.read_graph(parent.id));
  }

  TEST_CASE("invalid refinements are rejected before training") {
    TempDir dir;
    StateStore store(dir.path);
    const auto parent = run_pipeline(store, small_request());
    CHECK_THROWS_AS(apply_exclusions(store, parent.id, {{{"V1", "V7"}}}), ValidationError);
    CHECK_THROWS_AS(apply_exclusions(store, "run-0099", {{{"V1", "V2"}}}), NotFound);
    const auto child = apply_exclusions(store, parent.id, {{{"V1", "V2"}}});
    CHECK_THROWS_AS(apply_exclusions(store, child.id, {{{"V1", "V2"}}}), ValidationError);
    const auto reset = apply_exclusions(store, child.id, {{{"V2", "V1"}}, "", "", true});
    CHECK(reset.prior.exclusions() == std::vector<Exclusion>{{"V2", "V1"}});
    CHECK(store.run_ids().size() == 3);
  }
}

TEST_SUITE("state directory") {
  TEST_CASE("ids continue after reopening") {
    TempDir dir;
    {
      StateStore store(dir.path);
      run_pipeline(store, small_request({{"kind", "directory"}, {"path", "/nonexistent"}}));
    }
    StateStore again(dir.path);
    CHECK(again.allocate_run_id() == "run-0002");
    CHECK(again.run_ids() == std::vector<std::string>{"run-0001"});
  }

  TEST_CASE("corrupt state is refused") {
    TempDir dir;
    { StateStore store(dir.path); }
    fs::create_directories(dir.path / "runs" / "run-0001");
    std::ofstream(dir.path / "runs" / "run-0001" / "record.json") << "{ not json";
    CHECK_THROWS_AS(StateStore(dir.path), StateError);

    TempDir other;
    fs::create_directories(other.path / "runs" / "run-0003");
    CHECK_THROWS_AS(StateStore(other.path), StateError);

    TempDir jobs;
    fs::create_directories(jobs.path / "jobs");
    std::ofstream(jobs.path / "jobs" / "job-0001.json") << R"({"id": "job-0002", "status": "queued"})";
    CHECK_THROWS_AS(StateStore(jobs.path), StateError);
  }
}

TEST_SUITE("jobs") {
  TEST_CASE("one pending job at a time, idempotent by request id") {
    TempDir dir;
    StateStore store(dir.path);
    Gate gate;
    JobQueue queue(store, gate.runner());
    queue.start();
    auto body = small_request().to_json();
    body.erase("prior");
    body["request_id"] = "abc";
    const auto job = queue.submit("pipeline", body);
    CHECK(job["status"] == "queued");
    CHECK(job["run_id"] == "run-0001");
    CHECK(queue.submit("pipeline", body)["id"] == job["id"]);
    body["request_id"] = "def";
    try {
      queue.submit("pipeline", body);
      FAIL("expected QueueBusy");
    } catch (const QueueBusy& e) {
      CHECK(e.active_job == job["id"]);
      CHECK(e.queue_position == 1);
    }
    gate.release.set_value();
    REQUIRE(queue.wait_idle(std::chrono::seconds(60)));
    const auto done = queue.status(job["id"]);
    CHECK((*done)["status"] == "succeeded");
    CHECK((*done)["queue_position"].is_null());
    CHECK(store.has_run("run-0001"));
    CHECK(queue.submit("pipeline", body)["id"] == "job-0002");
    REQUIRE(queue.wait_idle(std::chrono::seconds(60)));
  }

  TEST_CASE("invalid submissions never enter the queue") {
    TempDir dir;
    StateStore store(dir.path);
    JobQueue queue(store);
    CHECK_THROWS_AS(queue.submit("pipeline", {{"dataset", {{"kind", "nope"}}}}), ValidationError);
    CHECK_THROWS_AS(queue.submit("exclusions", {{"exclusions", nlohmann::json::array()}}, "run-0042"), NotFound);
    CHECK(store.load_jobs().empty());
  }

  TEST_CASE("unfinished jobs resume after a restart") {
    TempDir dir;
    std::string job_id;
    {
      StateStore store(dir.path);
      JobQueue queue(store);  // never started: the job stays queued on disk
      auto body = small_request().to_json();
      body.erase("prior");
      job_id = queue.submit("pipeline", body)["id"];
    }
    {
      // Simulate a crash mid-run.
      StateStore store(dir.path);
      auto job = nlohmann::json::parse(read_file(store.job_path(job_id)));
      job["status"] = "running";
      store.save_job(job);
    }
    StateStore store(dir.path);
    JobQueue queue(store);
    CHECK((*queue.status(job_id))["status"] == "queued");
    queue.start();
    REQUIRE(queue.wait_idle(std::chrono::seconds(60)));
    const auto done = *queue.status(job_id);
    CHECK(done["status"] == "succeeded");
    CHECK(store.load_run(done["run_id"]).ok());
    CHECK(nlohmann::json::parse(read_file(store.job_path(job_id)))["status"] == "succeeded");
  }
}

TEST_SUITE("http api") {
  struct Service {
    TempDir dir;
    StateStore store{dir.path};
    Gate gate;
    JobQueue queue{store, gate.runner()};
    ApiServer server{store, queue};
    int port = server.bind("127.0.0.1", 0);
    std::thread thread{[this] { server.listen(); }};
    httplib::Client client{"127.0.0.1", port};

    Service() {
      queue.start();
      for (int i = 0; i < 200 && !client.Get("/runs"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ~Service() {
      try {
        gate.release.set_value();
      } catch (const std::future_error&) {
      }
      server.stop();
      thread.join();
      queue.stop();
    }
    nlohmann::json wait_job(const std::string& id) {
      for (int i = 0; i < 6000; ++i) {
        auto res = client.Get("/jobs/" + id + "/status");
        auto j = nlohmann::json::parse(res->body);
        if (j["status"] == "succeeded" || j["status"] == "failed") return j;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      return nullptr;
    }
  };

  TEST_CASE("read endpoints serve persisted state") {
    Service svc;
    const auto rec = run_pipeline(svc.store, small_request());
    REQUIRE(rec.ok());

    auto runs = svc.client.Get("/runs");
    REQUIRE(runs);
    CHECK(runs->status == 200);
    CHECK(runs->get_header_value("Access-Control-Allow-Origin") == "*");
    const auto list = nlohmann::json::parse(runs->body);
    CHECK(list["schema"] == 1);
    CHECK(list["runs"][0]["id"] == rec.id);

    auto one = svc.client.Get("/runs/" + rec.id);
    CHECK(nlohmann::json::parse(one->body) == rec.to_json());

    auto graph = svc.client.Get("/runs/" + rec.id + "/graph");
    CHECK(graph->status == 200);
    CHECK(graph->body == svc.store.read_graph(rec.id));
    CHECK(nlohmann::json::parse(graph->body)["schema"] == 1);

    auto grad = svc.client.Get("/runs/" + rec.id + "/gradients/V2");
    REQUIRE(grad->status == 200);
    const auto g = nlohmann::json::parse(grad->body);
    CHECK(g["schema"] == 1);
    CHECK(g["raw"].size() == 8);
    CHECK(g["raw"][0].size() == 3);
    CHECK(g == svc.store.read_gradients(rec.id)["targets"]["V2"]);

    CHECK(svc.client.Get("/runs/run-0404")->status == 404);
    CHECK(svc.client.Get("/runs/" + rec.id + "/gradients/V9")->status == 404);
    CHECK(svc.client.Get("/jobs/job-0404/status")->status == 404);
    const auto err = nlohmann::json::parse(svc.client.Get("/runs/run-0404")->body);
    CHECK(err["error"]["code"] == "not_found");
  }

  TEST_CASE("submissions, conflicts and the refinement loop") {
    Service svc;
    auto body = small_request().to_json();
    body.erase("prior");
    auto post = svc.client.Post("/runs", body.dump(), "application/json");
    REQUIRE(post);
    CHECK(post->status == 202);
    const auto job = nlohmann::json::parse(post->body);
    CHECK(job["schema"] == 1);
    const std::string run_id = job["run_id"];

    auto status = nlohmann::json::parse(svc.client.Get("/jobs/" + std::string(job["job_id"]) + "/status")->body);
    CHECK(status["queue_position"].is_number());

    auto busy = svc.client.Post("/runs/" + run_id + "/exclusions",
                                R"({"exclusions": [{"from": "V2", "to": "V3"}]})", "application/json");
    CHECK(busy->status == 404);  // the parent does not exist yet
    auto busy2 = svc.client.Post("/runs", body.dump(), "application/json");
    REQUIRE(busy2->status == 409);
    const auto conflict = nlohmann::json::parse(busy2->body);
    CHECK(conflict["queue_position"] == 1);
    CHECK(conflict["active_job"] == job["job_id"]);

    svc.gate.release.set_value();
    CHECK(svc.wait_job(job["job_id"])["status"] == "succeeded");
    CHECK(svc.client.Get("/runs/" + run_id)->status == 200);

    CHECK(svc.client.Post("/runs/" + run_id + "/exclusions", "{oops", "application/json")->status == 400);
    CHECK(svc.client.Post("/runs/" + run_id + "/exclusions", R"({"exclusions": [{"from": "V9", "to": "V3"}]})",
                          "application/json")
              ->status == 400);
    auto child = svc.client.Post("/runs/" + run_id + "/exclusions",
                                 R"({"exclusions": [{"from": "V2", "to": "V3"}], "user": "ana", "request_id": "r1"})",
                                 "application/json");
    REQUIRE(child->status == 202);
    const auto cj = nlohmann::json::parse(child->body);
    const auto repeat = svc.client.Post("/runs/" + run_id + "/exclusions",
                                        R"({"exclusions": [{"from": "V2", "to": "V3"}], "request_id": "r1"})",
                                        "application/json");
    CHECK(nlohmann::json::parse(repeat->body)["job_id"] == cj["job_id"]);
    CHECK(svc.wait_job(cj["job_id"])["status"] == "succeeded");

    const auto rec = nlohmann::json::parse(svc.client.Get("/runs/" + std::string(cj["run_id"]))->body);
    CHECK(rec["parent"] == run_id);
    CHECK(rec["prior"]["excluded"][0]["from"] == "V2");
    CHECK(rec["prior"]["excluded"][0]["provenance"]["user"] == "ana");
    const auto graph = nlohmann::json::parse(svc.client.Get("/runs/" + std::string(cj["run_id"]) + "/graph")->body);
    for (const auto& e : graph["edges"]) CHECK_FALSE((e["from"] == "V2" && e["to"] == "V3"));
  }

  TEST_CASE("a graph that violates its prior is never served") {
    Service svc;
    const auto rec = run_pipeline(svc.store, small_request());
    auto tampered = rec;
    tampered.prior.add({"V1", "V2"}, {});
    CausalGraph g = *rec.graph;
    g.edges.push_back({"V1", "V2", 1.0, 1});
    write_file_atomic(svc.store.run_dir(rec.id) / "graph.json", g.to_json().dump(2));
    svc.store.save_run(tampered);
    CHECK(svc.client.Get("/runs/" + rec.id + "/graph")->status == 500);
  }
}

TEST_SUITE("cli") {
  int run(const std::string& args) {
    const int status = std::system((std::string(TCD_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  TEST_CASE("verbs and exit codes") {
    TempDir dir;
    const std::string d = dir.path.string();
    std::ofstream(dir.path / "config.json")
        << R"({"model": {"embed": 8, "heads": 2, "layers": 1, "category_embed": 2, "epochs": 2}})";
    const std::string cfg = " --config " + d + "/config.json";
    CHECK(run("--seed 3 generate --kind motif --motif diamond --length 80 --out " + d + "/data") == 0);
    CHECK(fs::exists(dir.path / "data" / "truth.json"));
    CHECK(run(cfg + " train --data " + d + "/data --out " + d + "/model.bin") == 0);
    CHECK(run("extract --checkpoint " + d + "/model.bin --data " + d + "/data --out " + d + "/graph.json --gradients " +
              d + "/grad.json") == 0);
    CHECK(run("eval --graph " + d + "/graph.json --truth " + d + "/data/truth.json --out " + d + "/report.json") == 0);
    CHECK(nlohmann::json::parse(read_file(dir.path / "report.json"))["runs"].size() == 1);

    const std::string state = " --state-dir " + d + "/state";
    CHECK(run(cfg + state + " pipeline --data " + d + "/data") == 0);
    CHECK(run(state + cfg + " exclude --run run-0001 --edge V1:V2 --user ana") == 0);
    CHECK(StateStore(dir.path / "state").load_run("run-0002").prior.contains({"V1", "V2"}));

    CHECK(run("generate --kind comet --out " + d + "/x") == 2);
    CHECK(run("train --data " + d + "/data") == 2);
    CHECK(run(state + " exclude --run run-0001 --edge V1:V9") == 2);
    CHECK(run(state + " exclude --run run-0001 --edge nonsense") == 2);
    std::ofstream(dir.path / "bad.json") << R"({"model": {"heads": 7}})";
    CHECK(run("--config " + d + "/bad.json" + state + " pipeline --data " + d + "/data") == 2);
    CHECK(run(cfg + state + " pipeline --data " + d + "/missing") == 3);
    std::ofstream(dir.path / "lr.json") << R"({"model": {"embed": 8, "heads": 2, "layers": 1, "learning_rate": 1e300}})";
    CHECK(run("--config " + d + "/lr.json train --data " + d + "/data --out " + d + "/x.bin") == 3);

    fs::create_directories(dir.path / "broken" / "runs" / "junk");
    CHECK(run("--state-dir " + d + "/broken serve --bind 127.0.0.1:0") == 2);
  }
}

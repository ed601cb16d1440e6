#include "tcd/orchestrator.hpp"

namespace tcd {

namespace fs = std::filesystem;

RunRecord run_pipeline(StateStore& store, const RunRequest& request, std::optional<std::string> id,
                       std::optional<std::string> parent) {
  RunRecord rec;
  rec.id = id ? *id : store.allocate_run_id();
  rec.parent = std::move(parent);
  rec.dataset = request.dataset;
  rec.model = request.model;
  rec.extraction = request.extraction;
  rec.prior = request.prior;
  rec.created = utc_timestamp();
  const fs::path dir = store.run_dir(rec.id);

  auto fail = [&](const char* stage, const std::string& message) {
    rec.error = StageError{stage, message};
    rec.finished = utc_timestamp();
    try {
      store.save_run(rec);
    } catch (const std::exception&) {
      // The caller still gets the record.
    }
    return rec;
  };

  ResolvedDataset data;
  try {
    data = resolve_dataset(request.dataset);
  } catch (const std::exception& e) {
    return fail("dataset", e.what());
  }
  try {
    request.prior.validate(data.dataset.specs());
  } catch (const std::exception& e) {
    return fail("prior", e.what());
  }

  const auto exclusions = request.prior.exclusions();
  std::optional<Forecaster> model;
  try {
    model.emplace(train(data.dataset, exclusions, request.model));
  } catch (const TrainingDiverged& e) {
    return fail("train", std::string(e.what()) + " (epoch " + std::to_string(e.epoch) + ")");
  } catch (const std::exception& e) {
    return fail("train", e.what());
  }
  rec.telemetry = model->telemetry();

  Extraction ex;
  try {
    ex = extract(*model, data.dataset, request.extraction);
  } catch (const std::exception& e) {
    return fail("extract", e.what());
  }
  rec.graph = ex.graph;

  if (data.truth) {
    try {
      const RunPair pair[] = {{ex.graph, *data.truth}};
      rec.evaluation = evaluate_run(pair).to_json();
    } catch (const std::exception& e) {
      return fail("evaluate", e.what());
    }
  }

  try {
    save_dataset_dir(data.dataset, dir / "dataset");
    if (data.truth) save_truth(*data.truth, dir / "dataset" / "truth.json");
    save_checkpoint(*model, dir / "checkpoint.bin");
    rec.checkpoint = "checkpoint.bin";
    write_file_atomic(dir / "graph.json", ex.graph.to_json().dump(2));
    nlohmann::json grads{{"schema", 1}, {"targets", nlohmann::json::object()}};
    for (std::size_t j = 0; j < ex.gradients.size(); ++j) {
      grads["targets"][ex.gradients[j].target] = gradient_json(ex.gradients[j], ex.scores[j]);
    }
    write_file_atomic(dir / "gradients.json", grads.dump());
    rec.finished = utc_timestamp();
    store.save_run(rec);
  } catch (const std::exception& e) {
    rec.checkpoint.reset();
    return fail("persist", e.what());
  }
  return rec;
}

RunRequest child_request(const StateStore& store, const std::string& parent_id, const ExclusionRequest& req) {
  const RunRecord parent = store.load_run(parent_id);
  const fs::path data_dir = store.run_dir(parent_id) / "dataset";
  if (!parent.ok() || !fs::exists(data_dir / "schema.json")) {
    throw ValidationError("run " + parent_id + " did not complete and cannot be refined");
  }
  const Dataset dataset = load_dataset_dir(data_dir);
  RunRequest child{parent.dataset, parent.model, parent.extraction, {}};
  if (!req.reset) child.prior = parent.prior;
  const std::size_t iteration = parent.prior.max_iteration() + 1;
  for (const auto& link : req.links) {
    if (child.prior.contains(link)) {
      throw ValidationError("exclusion " + link.cause + " -> " + link.effect + " is already in effect");
    }
    child.prior.add(link, {req.user, req.file, iteration});
  }
  child.prior.validate(dataset.specs());
  return child;
}

RunRecord apply_exclusions(StateStore& store, const std::string& parent_id, const ExclusionRequest& req,
                           std::optional<std::string> id) {
  return run_pipeline(store, child_request(store, parent_id, req), std::move(id), parent_id);
}

CausalGraph reextract(const StateStore& store, const std::string& id) {
  const RunRecord rec = store.load_run(id);
  if (!rec.checkpoint) throw NotFound("run " + id + " has no checkpoint");
  const fs::path dir = store.run_dir(id);
  const Forecaster model = load_checkpoint(dir / *rec.checkpoint);
  const Dataset dataset = load_dataset_dir(dir / "dataset");
  return extract(model, dataset, rec.extraction).graph;
}

}  // namespace tcd

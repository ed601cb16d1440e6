// tcd: command line front end for generation, training, extraction,
// evaluation, the refinement loop and the HTTP service.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "tcd/service.hpp"

using namespace tcd;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kStageFailure = 3;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string state_dir = "tcd-state";
};

struct FileConfig {
  ModelConfig model;
  ExtractionConfig extraction;
};

FileConfig load_config(const Globals& g) {
  FileConfig c;
  if (!g.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(g.config));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config " + g.config + ": " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "model") c.model = ModelConfig::from_json(value);
      else if (key == "extraction") c.extraction = ExtractionConfig::from_json(value);
      else throw ValidationError("unknown config section '" + key + "'");
    }
  }
  if (g.seed) c.model.seed = *g.seed;
  c.model.validate();
  c.extraction.validate();
  return c;
}

std::vector<Exclusion> load_exclusions(const std::string& path) {
  if (path.empty()) return {};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("exclusions " + path + ": " + e.what());
  }
  if (j.is_object()) return PriorKnowledge::from_json(j).exclusions();
  return exclusions_from_json(j);
}

Exclusion parse_edge(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ValidationError("edge '" + text + "' must look like CAUSE:EFFECT");
  }
  return {text.substr(0, colon), text.substr(colon + 1)};
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    write_file_atomic(path, j.dump(2));
  }
}

int report_record(const RunRecord& rec) {
  nlohmann::json out{{"id", rec.id}, {"status", rec.ok() ? "complete" : "failed"}};
  if (rec.graph) out["graph"] = rec.graph->to_json();
  if (rec.evaluation) out["evaluation"] = *rec.evaluation;
  if (rec.error) out["error"] = {{"stage", rec.error->stage}, {"message", rec.error->message}};
  std::cout << out.dump(2) << '\n';
  return rec.ok() ? kOk : kStageFailure;
}

ApiServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer-based temporal causal discovery"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (model; generator for 'generate')");
  app.add_option("--config", g.config, "JSON file with 'model' and 'extraction' sections");
  app.add_option("--state-dir", g.state_dir, "Run state directory")->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset with ground truth");
  std::string gen_kind, motif_name = "fork", gen_out;
  std::size_t gen_length = 1000, gen_vars = 10;
  std::optional<double> gen_forcing;
  gen->add_option("--kind", gen_kind, "motif or lorenz96")->required()->check(CLI::IsMember({"motif", "lorenz96"}));
  gen->add_option("--motif", motif_name, "fork, v-structure, mediator or diamond")->capture_default_str();
  gen->add_option("--length", gen_length, "Samples")->capture_default_str();
  gen->add_option("--variables", gen_vars, "Lorenz-96 variables")->capture_default_str();
  gen->add_option("--forcing", gen_forcing, "Lorenz-96 forcing (default: drawn from [30, 40])");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a forecaster");
  std::string tr_data, tr_out, tr_excl;
  tr->add_option("--data", tr_data, "Dataset directory (data.csv + schema.json)")->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--exclusions", tr_excl, "JSON list of {from, to} or a prior knowledge file");

  // extract
  auto* ex = app.add_subcommand("extract", "Extract a causal graph from a checkpoint");
  std::string ex_ckpt, ex_data, ex_out = "-", ex_grad;
  std::optional<double> ex_tau, ex_eps;
  std::optional<std::string> ex_agg;
  ex->add_option("--checkpoint", ex_ckpt)->required();
  ex->add_option("--data", ex_data)->required();
  ex->add_option("--out", ex_out, "Graph JSON path ('-' for stdout)");
  ex->add_option("--gradients", ex_grad, "Write per-target gradient matrices here");
  ex->add_option("--tau", ex_tau);
  ex->add_option("--epsilon", ex_eps);
  ex->add_option("--aggregation", ex_agg)->check(CLI::IsMember({"mean-absolute", "signed"}));

  // eval
  auto* ev = app.add_subcommand("eval", "Score graphs against ground truth");
  std::vector<std::string> ev_graphs, ev_truths;
  std::string ev_label = "dataset", ev_out;
  ev->add_option("--graph", ev_graphs, "Graph JSON (repeat, paired with --truth)")->required();
  ev->add_option("--truth", ev_truths, "truth.json (repeat)")->required();
  ev->add_option("--label", ev_label, "Row label in the table")->capture_default_str();
  ev->add_option("--out", ev_out, "Report JSON path");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Train, extract, evaluate and persist a run");
  std::string pl_dataset, pl_data, pl_excl, pl_user;
  pl->add_option("--dataset", pl_dataset, R"(Dataset reference JSON, e.g. {"kind":"motif","motif":"fork","seed":1})");
  pl->add_option("--data", pl_data, "Dataset directory (shorthand for a directory reference)");
  pl->add_option("--exclusions", pl_excl, "Initial excluded links");
  pl->add_option("--user", pl_user, "Recorded in the prior knowledge provenance");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP API");
  std::string sv_bind = "127.0.0.1:8080";
  sv->add_option("--bind", sv_bind, "host:port")->capture_default_str();

  // exclude
  auto* xc = app.add_subcommand("exclude", "Retrain a run with additional excluded links");
  std::string xc_run, xc_file, xc_user;
  std::vector<std::string> xc_edges;
  bool xc_reset = false;
  xc->add_option("--run", xc_run, "Parent run id")->required();
  xc->add_option("--edge", xc_edges, "CAUSE:EFFECT (repeat)");
  xc->add_option("--file", xc_file, "JSON list of {from, to}");
  xc->add_option("--user", xc_user);
  xc->add_flag("--reset", xc_reset, "Start from an empty exclusion set instead of the parent's");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*gen) {
      if (gen_kind == "motif") {
        MotifConfig c;
        c.kind = parse_motif(motif_name);
        c.length = gen_length;
        c.seed = g.seed.value_or(0);
        c.validate();
        save_generated(tcd::gen_motif(c), gen_out);
      } else {
        Lorenz96Config c;
        c.variables = gen_vars;
        c.samples = gen_length;
        c.forcing = gen_forcing;
        c.seed = g.seed.value_or(0);
        c.validate();
        try {
          save_generated(simulate_lorenz96(c), gen_out);
        } catch (const SimulationError& e) {
          std::cerr << "error: " << e.what() << '\n';
          return kStageFailure;
        }
      }
      std::cout << gen_out << '\n';
      return kOk;
    }

    if (*tr) {
      const auto cfg = load_config(g);
      const Dataset data = load_dataset_dir(tr_data);
      const auto exclusions = load_exclusions(tr_excl);
      TrainOptions opts;
      const std::size_t every = std::max<std::size_t>(1, cfg.model.epochs / 10);
      opts.progress = [&](std::size_t epoch, double loss) {
        if ((epoch + 1) % every == 0) std::cerr << "epoch " << epoch + 1 << " loss " << loss << '\n';
      };
      try {
        const Forecaster model = train(data, exclusions, cfg.model, opts);
        save_checkpoint(model, tr_out);
        std::cout << nlohmann::json{{"checkpoint", tr_out},
                                    {"initial_loss", model.telemetry().initial_loss()},
                                    {"final_loss", model.telemetry().final_loss()}}
                         .dump(2)
                  << '\n';
      } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << " at epoch " << e.epoch << '\n';
        return kStageFailure;
      }
      return kOk;
    }

    if (*ex) {
      auto cfg = load_config(g).extraction;
      if (ex_tau) cfg.tau = *ex_tau;
      if (ex_eps) cfg.epsilon = *ex_eps;
      if (ex_agg) cfg.aggregation = parse_aggregation(*ex_agg);
      cfg.validate();
      const Forecaster model = load_checkpoint(ex_ckpt);
      const Dataset data = load_dataset_dir(ex_data);
      const auto out = extract(model, data, cfg);
      write_json(ex_out, out.graph.to_json());
      if (!ex_grad.empty()) {
        nlohmann::json grads{{"schema", 1}, {"targets", nlohmann::json::object()}};
        for (std::size_t j = 0; j < out.gradients.size(); ++j) {
          grads["targets"][out.gradients[j].target] = gradient_json(out.gradients[j], out.scores[j]);
        }
        write_json(ex_grad, grads);
      }
      return kOk;
    }

    if (*ev) {
      if (ev_graphs.size() != ev_truths.size()) throw ValidationError("--graph and --truth must pair up");
      std::vector<RunPair> runs;
      for (std::size_t i = 0; i < ev_graphs.size(); ++i) {
        runs.push_back({CausalGraph::from_json(nlohmann::json::parse(read_file(ev_graphs[i]))),
                        load_truth(ev_truths[i])});
      }
      const auto report = evaluate_run(runs);
      const std::pair<std::string, EvalReport> rows[] = {{ev_label, report}};
      std::cout << format_tables(rows);
      if (!ev_out.empty()) write_json(ev_out, report.to_json());
      return kOk;
    }

    if (*pl) {
      const auto cfg = load_config(g);
      RunRequest req;
      if (!pl_dataset.empty() == !pl_data.empty()) throw ValidationError("give exactly one of --dataset or --data");
      try {
        req.dataset = pl_data.empty() ? nlohmann::json::parse(pl_dataset)
                                      : nlohmann::json{{"kind", "directory"},
                                                       {"path", std::filesystem::absolute(pl_data).string()}};
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("--dataset is not JSON: ") + e.what());
      }
      req.model = cfg.model;
      req.extraction = cfg.extraction;
      for (auto& e : load_exclusions(pl_excl)) req.prior.add(std::move(e), {pl_user, pl_excl, 0});
      req.validate();
      StateStore store(g.state_dir);
      return report_record(run_pipeline(store, req));
    }

    if (*xc) {
      ExclusionRequest req;
      for (const auto& e : xc_edges) req.links.push_back(parse_edge(e));
      for (auto& e : load_exclusions(xc_file)) req.links.push_back(std::move(e));
      req.user = xc_user;
      req.file = xc_file;
      req.reset = xc_reset;
      StateStore store(g.state_dir);
      return report_record(apply_exclusions(store, xc_run, req));
    }

    if (*sv) {
      const auto colon = sv_bind.rfind(':');
      if (colon == std::string::npos) throw ValidationError("--bind must be host:port");
      int port = 0;
      try {
        port = std::stoi(sv_bind.substr(colon + 1));
      } catch (const std::exception&) {
        throw ValidationError("bad port in --bind " + sv_bind);
      }
      std::unique_ptr<StateStore> store;
      try {
        store = std::make_unique<StateStore>(g.state_dir);
      } catch (const StateError& e) {
        std::cerr << "refusing to start: " << e.what() << '\n';
        return kValidation;
      }
      JobQueue queue(*store);
      ApiServer server(*store, queue);
      try {
        port = server.bind(sv_bind.substr(0, colon), port);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kStageFailure;
      }
      queue.start();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << sv_bind.substr(0, colon) << ':' << port << '\n';
      server.listen();
      queue.stop();
      return kOk;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const NotFound& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStageFailure;
  }
  return kOk;
}

#include <algorithm>
#include <numeric>
#include <random>

#include "tcd/forecaster.hpp"

namespace tcd {

namespace {

// Windows per forward/backward pass; gradients of a batch are summed over
// chunks in a fixed order, so results do not depend on the chunk size
// beyond floating-point association.
constexpr std::size_t kTrainChunk = 256;

bool all_finite(const Gradients& g) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g[i].all_finite()) return false;
  }
  return true;
}

}  // namespace

void train_epochs(Forecaster& model, std::span<const WindowedExample> examples,
                  const TrainOptions& options) {
  const std::size_t n = examples.size();
  if (n == 0) throw ValidationError("no training windows");
  const ModelConfig& cfg = model.config();
  ParameterStore& params = model.parameters();
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  OptimizerState opt(params, adam);
  std::mt19937_64 shuffle(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool full_batch = n <= cfg.full_batch_limit;
  const std::size_t batch_size = full_batch ? n : cfg.batch_size;

  TrainingTelemetry& tel = model.telemetry();
  tel.windows = n;
  std::vector<WindowedExample> scratch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ParameterStore last_good = params;
    if (!full_batch) std::shuffle(order.begin(), order.end(), shuffle);
    double epoch_loss = 0.0;
    try {
      for (std::size_t lo = 0; lo < n; lo += batch_size) {
        const std::size_t hi = std::min(n, lo + batch_size);
        const double weight = 1.0 / static_cast<double>(hi - lo);
        Gradients total(params);
        double batch_loss = 0.0;
        for (std::size_t c = lo; c < hi; c += kTrainChunk) {
          const std::size_t ce = std::min(hi, c + kTrainChunk);
          std::span<const WindowedExample> chunk;
          if (full_batch) {
            chunk = examples.subspan(c, ce - c);
          } else {
            scratch.clear();
            for (std::size_t i = c; i < ce; ++i) scratch.push_back(examples[order[i]]);
            chunk = scratch;
          }
          Graph g(&params);
          const auto preds = model.forward(g, chunk);
          Var loss = model.loss(preds, chunk, weight);
          batch_loss += loss.value().item();
          total.accumulate(g.backward(loss));
        }
        if (!all_finite(total)) throw std::domain_error("non-finite gradient");
        adam_step(params, total, opt);
        ++tel.steps;
        epoch_loss += batch_loss * static_cast<double>(hi - lo) / static_cast<double>(n);
      }
    } catch (const std::domain_error& e) {
      auto good = std::make_shared<Forecaster>(model);
      good->parameters() = last_good;
      throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(),
                             std::move(good), epoch);
    }
    tel.epoch_losses.push_back(epoch_loss);
    if (options.progress) options.progress(epoch, epoch_loss);
  }
}

Forecaster train(const Dataset& dataset, std::span<const Exclusion> exclusions,
                 const ModelConfig& config, const TrainOptions& options) {
  config.validate();
  Forecaster model(dataset.specs(), config, fit_normalizer(dataset),
                   std::vector<Exclusion>(exclusions.begin(), exclusions.end()));
  const auto examples = model.windows(dataset);
  train_epochs(model, examples, options);
  return model;
}

}  // namespace tcd

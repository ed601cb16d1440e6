#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "support/fd_oracle.hpp"
#include "support/models.hpp"
#include "tcd/forecaster.hpp"

using namespace tcd;
using namespace tcd::testing;

namespace {

Forecaster untrained(const Dataset& d, const ModelConfig& c, std::vector<Exclusion> ex = {}) {
  return Forecaster(d.specs(), c, fit_normalizer(d), std::move(ex));
}

double predict_one(const Forecaster& m, const WindowedExample& ex, std::size_t target) {
  return m.predict(std::span(&ex, 1))[0][target][0];
}

}  // namespace

TEST_SUITE("levels") {
  TEST_CASE("token arithmetic examples") {
    CHECK(patch_count(8, 8, 8) == 1);
    CHECK(patch_count(16, 4, 4) == 4);
    CHECK(sliding_window_count(10, 4, 3) == 3);
    CHECK(sliding_window_count(3, 4, 4) == 1);
    CHECK(level_token_counts(1, 4, 4) == std::vector<std::size_t>{1, 1});
    CHECK(level_token_counts(10, 4, 3) == std::vector<std::size_t>{10, 3, 1});
  }

  TEST_CASE("recursion matches the closed form and is minimal") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t w = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
      const std::size_t s = std::uniform_int_distribution<std::size_t>(1, w)(rng);
      const std::size_t t = std::uniform_int_distribution<std::size_t>(1, 400)(rng);
      const auto counts = level_token_counts(t, w, s);
      CHECK(counts == closed_form_levels(t, w, s));
      CHECK(counts.back() == 1);
      if (counts.size() > 2) CHECK(counts[counts.size() - 2] > 1);
    }
  }

  TEST_CASE("stalling or gapped recursions are rejected") {
    CHECK_THROWS_AS(level_token_counts(5, 1, 1), ValidationError);
    CHECK_THROWS_AS(level_token_counts(10, 4, 5), ValidationError);
    CHECK_NOTHROW(level_token_counts(1, 1, 1));
  }

  TEST_CASE("config validation") {
    ModelConfig c;
    c.heads = 7;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = ModelConfig{};
    c.patch = 9;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = ModelConfig{};
    CHECK_NOTHROW(c.validate());
    CHECK(c.tokens_per_series() == 1);
    CHECK(ModelConfig::from_json(c.to_json()) == c);
    CHECK_THROWS_AS(ModelConfig::from_json({{"bogus", 1}}), ValidationError);
  }
}

TEST_SUITE("masks") {
  const std::vector<VariableSpec> three{{"U1", VariableKind::SeriesNumerical},
                                        {"U2", VariableKind::SeriesNumerical},
                                        {"U3", VariableKind::SeriesNumerical}};

  TEST_CASE("default pattern: targets see sources, sources see themselves") {
    const auto set = build_masks(three, {}, ModelConfig{});
    REQUIRE(set.base.rows() == 6);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 6; ++c) {
        const bool expected = (r < 3 && c >= 3) || (r >= 3 && r == c);
        CHECK(set.base(r, c) == expected);
      }
    }
    REQUIRE(set.levels.size() == 1);
    CHECK(set.levels[0][0].mask == set.base);
  }

  TEST_CASE("exclusion zeroes the target row at the source column") {
    const std::vector<Exclusion> ex{{"U1", "U3"}};
    const auto set = build_masks(three, ex, ModelConfig{});
    CHECK_FALSE(set.base(2, 3));
    CHECK(set.base.count() == build_masks(three, {}, ModelConfig{}).base.count() - 1);
  }

  TEST_CASE("time-series columns replicate W_conv times") {
    std::vector<VariableSpec> specs{{"x", VariableKind::SeriesNumerical, 0, true, false},
                                    {"y", VariableKind::StaticNumerical, 0, false, true}};
    ModelConfig c;
    c.window = 16;
    c.patch = c.patch_stride = 4;
    const auto set = build_masks(specs, {}, c);
    REQUIRE(set.levels.size() == 1);
    const BinaryMask& m = set.levels[0][set.find(0, 4)].mask;
    CHECK(m.rows() == 5);
    for (std::size_t col = 1; col < 5; ++col) CHECK(m(0, col));
    CHECK_FALSE(m(0, 0));
  }

  TEST_CASE("unknown or out-of-domain exclusions are rejected") {
    const std::vector<Exclusion> unknown{{"U9", "U1"}};
    CHECK_THROWS_AS(build_masks(three, unknown, ModelConfig{}), ValidationError);
    std::vector<VariableSpec> specs = three;
    specs[0].target = false;
    const std::vector<Exclusion> not_target{{"U2", "U1"}};
    CHECK_THROWS_AS(build_masks(specs, not_target, ModelConfig{}), ValidationError);
  }

  TEST_CASE("property: every expanded mask blocks every excluded pair") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
      std::vector<VariableSpec> specs;
      for (std::size_t i = 0; i < n; ++i) {
        const bool stat = std::bernoulli_distribution(0.25)(rng);
        specs.push_back({"V" + std::to_string(i), stat ? VariableKind::StaticNumerical
                                                       : VariableKind::SeriesNumerical});
      }
      std::vector<Exclusion> ex;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (std::bernoulli_distribution(0.3)(rng)) ex.push_back({specs[i].name, specs[j].name});
        }
      }
      ModelConfig c;
      c.window = 12;
      c.patch = 2;
      c.patch_stride = 2;
      c.conv_window = 3;
      c.conv_stride = 2;
      const auto set = build_masks(specs, ex, c);
      for (std::size_t l = 0; l < set.levels.size(); ++l) {
        for (const auto& em : set.levels[l]) {
          // Token order: n targets, then each source's tokens.
          std::vector<std::size_t> first(n), count(n);
          std::size_t pos = n;
          for (std::size_t i = 0; i < n; ++i) {
            first[i] = pos;
            count[i] = is_static(specs[i].kind) ? 1 : em.series_tokens;
            pos += count[i];
          }
          REQUIRE(em.mask.rows() == pos);
          for (const auto& e : ex) {
            const std::size_t i = std::stoul(e.cause.substr(1)), j = std::stoul(e.effect.substr(1));
            for (std::size_t t = 0; t < count[i]; ++t) CHECK_FALSE(em.mask(j, first[i] + t));
          }
          for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) CHECK_FALSE(em.mask(a, b));
          }
        }
      }
    }
  }
}

TEST_SUITE("encoding") {
  TEST_CASE("missing patch token equals the learned missing token") {
    const Dataset d = random_series(2, 40, 3);
    Forecaster m = untrained(d, tiny_config());
    auto windows = m.windows(d);
    windows[0].inputs[1].assign(8, kMissing);
    const auto tok = encode_inputs(m, std::span(windows).first(2));
    const Tensor& miss = m.parameters().value(m.parameters().index("missing/V2"));
    REQUIRE(tok.sources[1].rows() == 2);
    for (std::size_t c = 0; c < 8; ++c) CHECK(tok.sources[1].at(0, c) == miss[c]);
    CHECK(tok.missing[1] == std::vector<std::uint8_t>{1, 0});
    CHECK(tok.sources[1].at(1, 0) != miss[0]);
  }

  TEST_CASE("one token per series at S = P = S_patch = 8") {
    const Dataset d = random_series(3, 40, 4);
    Forecaster m = untrained(d, tiny_config());
    const auto windows = m.windows(d);
    const auto tok = encode_inputs(m, std::span(windows).first(5));
    for (const auto& t : tok.sources) CHECK(t.rows() == 5);
    CHECK(tok.sentinels.size() == 3);
    CHECK(m.level_count() == 1);
  }

  TEST_CASE("categorical series use a D' x P pre-projection") {
    const Dataset d = mixed_dataset(30, 2);
    ModelConfig c = tiny_config();
    c.patch = c.patch_stride = 2;
    c.category_embed = 4;
    c.conv_window = 2;
    c.conv_stride = 2;
    Forecaster m = untrained(d, c);
    const auto& enc = m.parameters().value(m.parameters().index("encode/cat"));
    CHECK(enc.shape() == std::vector<std::size_t>{8, c.embed});
    auto windows = m.windows(d);
    windows[0].inputs[1][0] = 4.0;
    CHECK_THROWS_AS(encode_inputs(m, std::span(windows).first(1)), ValidationError);
  }
}

TEST_SUITE("forward and loss") {
  TEST_CASE("output sizes follow target kinds") {
    const Dataset d = mixed_dataset(30, 2);
    ModelConfig c = tiny_config();
    c.horizon = 2;
    Forecaster m = untrained(d, c);
    CHECK(m.output_size(0) == 2);
    CHECK(m.output_size(1) == 6);
    CHECK(m.output_size(2) == 1);
    CHECK(m.output_size(3) == 2);
    const auto w = m.windows(d);
    const auto p = m.predict(w);
    REQUIRE(p.size() == w.size());
    CHECK(p[0][1].size() == 6);

    std::vector<VariableSpec> specs{{"x", VariableKind::SeriesNumerical, 0, true, false},
                                    {"k", VariableKind::StaticCategorical, 3, false, true}};
    Dataset dk(specs, {std::vector<double>(20, 0.0), {2.0}});
    Forecaster mk = untrained(dk, tiny_config());
    CHECK(mk.predict(mk.windows(dk))[0][0].size() == 3);
  }

  TEST_CASE("loss examples") {
    std::vector<VariableSpec> specs{{"y", VariableKind::SeriesNumerical, 0, true, true},
                                    {"k", VariableKind::SeriesCategorical, 4, false, true}};
    Forecaster m(specs, tiny_config(), Normalizer({{"y", {0.0, 1.0, false}}}));
    WindowedExample ex;
    ex.inputs = {std::vector<double>(8, 0.0)};
    ex.targets = {{2.0}, {3.0}};

    CHECK(compute_loss(m, {{{2.0}, {0.0, 0.0, 0.0, 0.0}}}, std::span(&ex, 1)) ==
          doctest::Approx(std::log(4.0)));
    CHECK(compute_loss(m, {{{1.0}, {0.0, 0.0, 0.0, 0.0}}}, std::span(&ex, 1)) ==
          doctest::Approx(1.0 + std::log(4.0)));
    ex.targets[1] = {kMissing};
    CHECK(compute_loss(m, {{{2.0}, {5.0, 0.0, 0.0, 0.0}}}, std::span(&ex, 1)) == 0.0);
    ex.targets[0] = {kMissing};
    CHECK_THROWS_AS(compute_loss(m, {{{2.0}, {0.0, 0.0, 0.0, 0.0}}}, std::span(&ex, 1)),
                    ValidationError);
  }

  TEST_CASE("reverse-mode gradients of the full model match central differences") {
    const Dataset d = mixed_dataset(24, 9);
    ModelConfig c = tiny_config(8, 2);
    c.patch = c.patch_stride = 2;
    c.conv_window = 2;
    c.conv_stride = 2;
    c.horizon = 2;
    Forecaster m = untrained(d, c, {{"num", "cat"}});
    REQUIRE(m.level_count() == 2);
    auto w = m.windows(d);
    w.resize(5);
    w[1].inputs[0][3] = kMissing;
    w[2].targets[0][1] = kMissing;
    Graph g(&m.parameters());
    Var loss = m.loss(m.forward(g, w), w, 0.2);
    const Gradients grads = g.backward(loss);
    auto fn = [&](const ParameterStore&) {
      Graph eval(&m.parameters(), false);
      return m.loss(m.forward(eval, w), w, 0.2).value().item();
    };
    const auto res = check_gradients(m.parameters(), grads, fn, 4, 3, 1e-5, 1e-6);
    CHECK(res.checked > 100);
    CHECK(res.worst_relative_error < 1e-4);
  }
}

TEST_SUITE("enforcement") {
  ModelConfig depth_config(std::size_t layers, bool two_levels, SourceAttention policy) {
    ModelConfig c = tiny_config(16, layers);
    if (two_levels) {
      c.patch = 2;
      c.patch_stride = 3;
      c.conv_window = 2;
      c.conv_stride = 1;
    }
    c.source_attention = policy;
    return c;
  }

  double worst_leak(const ModelConfig& c) {
    const Dataset d = random_series(3, 60, 12);
    Forecaster m = untrained(d, c, {{"V1", "V3"}});
    const auto w = m.windows(d);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> delta(0.0, 0.5);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      WindowedExample ex = w[static_cast<std::size_t>(trial)];
      const double base = predict_one(m, ex, 2);
      for (double& v : ex.inputs[0]) v += delta(rng);
      worst = std::max(worst, std::abs(predict_one(m, ex, 2) - base));
    }
    return worst;
  }

  TEST_CASE("excluded cause never reaches the target at any depth") {
    for (auto [layers, two] : {std::pair{1, false}, {2, false}, {2, true}, {4, true}}) {
      const auto c = depth_config(layers, two, SourceAttention::IntraVariable);
      CHECK(worst_leak(c) < 1e-12);
    }
  }

  TEST_CASE("negative control: cross-variable source attention leaks from depth 2") {
    CHECK(worst_leak(depth_config(1, false, SourceAttention::AllSources)) < 1e-12);
    CHECK(worst_leak(depth_config(2, false, SourceAttention::AllSources)) > 1e-6);
    CHECK(worst_leak(depth_config(2, true, SourceAttention::AllSources)) > 1e-6);
  }
}

TEST_SUITE("training") {
  Dataset shifted_pair(std::size_t length) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> x(length), y(length, 0.0);
    for (double& v : x) v = n(rng);
    for (std::size_t t = 1; t < length; ++t) y[t] = x[t - 1];
    std::vector<VariableSpec> specs{{"X", VariableKind::SeriesNumerical, 0, true, false},
                                    {"Y", VariableKind::SeriesNumerical, 0, false, true}};
    return Dataset(specs, {x, y});
  }

  TEST_CASE("learns a one-step shift") {
    ModelConfig c = tiny_config(16, 2);
    c.epochs = 500;
    c.seed = 3;
    const Forecaster m = train(shifted_pair(200), {}, c);
    const auto& tel = m.telemetry();
    REQUIRE(tel.epoch_losses.size() == 500);
    CHECK(tel.final_loss() < 0.05);
    CHECK(tel.final_loss() < tel.initial_loss());
    CHECK(tel.windows == 192);
    CHECK(tel.steps == 500);
  }

  TEST_CASE("same seed gives identical telemetry and parameters") {
    ModelConfig c = tiny_config(8, 1);
    c.epochs = 20;
    const Dataset d = random_series(3, 80, 2);
    const Forecaster a = train(d, {}, c);
    const Forecaster b = train(d, {}, c);
    CHECK(a.telemetry() == b.telemetry());
    CHECK(a.parameters() == b.parameters());
    c.seed = 1;
    CHECK_FALSE(train(d, {}, c).telemetry() == a.telemetry());
  }

  TEST_CASE("constant target is fitted almost exactly") {
    std::vector<VariableSpec> specs{{"X", VariableKind::SeriesNumerical, 0, true, false},
                                    {"Y", VariableKind::SeriesNumerical, 0, false, true}};
    Dataset base = random_series(1, 100, 4);
    Dataset d(specs, {std::vector<double>(base.values(0).begin(), base.values(0).end()),
                      std::vector<double>(100, 3.0)});
    ModelConfig c = tiny_config(8, 1);
    c.epochs = 500;
    CHECK(train(d, {}, c).telemetry().final_loss() < 0.01);
  }

  TEST_CASE("mini-batches kick in above the full-batch limit") {
    ModelConfig c = tiny_config(8, 1);
    c.epochs = 2;
    c.full_batch_limit = 50;
    c.batch_size = 32;
    const Forecaster m = train(random_series(2, 109, 1), {}, c);
    CHECK(m.telemetry().steps == 2 * 4);
  }

  TEST_CASE("divergence aborts with the last good parameters") {
    ModelConfig c = tiny_config(8, 1);
    c.epochs = 50;
    c.learning_rate = 1e300;
    const Dataset d = random_series(2, 40, 1);
    try {
      train(d, {}, c);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      REQUIRE(e.last_good);
      for (std::size_t i = 0; i < e.last_good->parameters().size(); ++i) {
        CHECK(e.last_good->parameters().value(i).all_finite());
      }
    }
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const Dataset d = mixed_dataset(40, 6);
  ModelConfig c = tiny_config(8, 1);
  c.epochs = 3;
  const std::vector<Exclusion> ex{{"num", "scat"}};
  const Forecaster m = train(d, ex, c);
  const auto path = std::filesystem::temp_directory_path() / "tcd_ckpt_test.bin";
  save_checkpoint(m, path);
  const Forecaster r = load_checkpoint(path);
  CHECK(r.parameters() == m.parameters());
  CHECK(r.config() == m.config());
  CHECK(r.specs() == m.specs());
  CHECK(r.normalizer() == m.normalizer());
  CHECK(r.exclusions() == m.exclusions());
  CHECK(r.telemetry() == m.telemetry());
  const auto w = m.windows(d);
  CHECK(r.predict(w) == m.predict(w));

  std::ofstream(path, std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
}

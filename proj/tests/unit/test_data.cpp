#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "tcd/data.hpp"

using namespace tcd;

namespace {

VariableSpec series(std::string name) { return {std::move(name), VariableKind::SeriesNumerical}; }

Dataset single_series(std::vector<double> v) { return Dataset({series("x")}, {std::move(v)}); }

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tcd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("spec validation") {
    CHECK_THROWS_AS(VariableSpec({"c", VariableKind::SeriesCategorical, 1}).validate(), ValidationError);
    CHECK_THROWS_AS(VariableSpec({"n", VariableKind::SeriesNumerical, 3}).validate(), ValidationError);
    CHECK_THROWS_AS(VariableSpec({"r", VariableKind::SeriesNumerical, 0, false, false}).validate(),
                    ValidationError);
    CHECK_NOTHROW(VariableSpec({"c", VariableKind::StaticCategorical, 2}).validate());
  }

  TEST_CASE("series lengths and category ranges are enforced") {
    CHECK_THROWS_AS(Dataset({series("a"), series("b")}, {{1, 2, 3}, {1, 2}}), ValidationError);
    VariableSpec cat{"c", VariableKind::SeriesCategorical, 3};
    CHECK_THROWS_AS(Dataset({cat}, {{1, 4}}), ValidationError);
    CHECK_THROWS_AS(Dataset({cat}, {{1, 1.5}}), ValidationError);
    CHECK_NOTHROW(Dataset({cat}, {{1, kMissing, 3}}));
  }
}

TEST_SUITE("normalizer") {
  TEST_CASE("percentiles of 0..100") {
    std::vector<double> v;
    for (int i = 0; i <= 100; ++i) v.push_back(i);
    const Dataset d = single_series(v);
    const Normalizer n = fit_normalizer(d);
    CHECK(n.range("x").p5 == doctest::Approx(5.0));
    CHECK(n.range("x").p95 == doctest::Approx(95.0));
    CHECK(n.apply("x", 50.0) == doctest::Approx(0.5));
    CHECK(n.apply("x", 5.0) == doctest::Approx(0.0));
    CHECK(n.apply("x", 95.0) == doctest::Approx(1.0));
    // below p5: (0 - 5) / 90, no clamping
    CHECK(n.apply("x", 0.0) == doctest::Approx(-5.0 / 90.0));
  }

  TEST_CASE("constant series is degenerate and maps to 0.5") {
    const Normalizer n = fit_normalizer(single_series({3, 3, 3, 3}));
    CHECK(n.range("x").degenerate);
    CHECK(n.apply("x", 3.0) == 0.5);
    CHECK(n.warnings().size() == 1);
  }

  TEST_CASE("missing values are skipped and preserved") {
    const Dataset d = single_series({kMissing, 0, 10, kMissing, 20});
    const Normalizer n = fit_normalizer(d);
    const Dataset z = apply_normalizer(n, d);
    CHECK(is_missing(z.values(0)[0]));
    CHECK(is_missing(z.values(0)[3]));
    CHECK(is_missing(n.invert("x", kMissing)));
    CHECK_THROWS_AS(fit_normalizer(single_series({kMissing, kMissing})), ValidationError);
    CHECK_THROWS_AS(n.apply("y", 1.0), ValidationError);
  }

  TEST_CASE("property: round trip and argmax preservation") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise(3.0, 7.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> v(200);
      for (double& x : v) x = noise(rng);
      const Dataset d = single_series(v);
      const Normalizer n = fit_normalizer(d);
      const Dataset z = apply_normalizer(n, d);
      const auto back = invert(n, "x", z.values(0));
      for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(back[i] - v[i]) < 1e-12);
      auto zs = z.values(0);
      CHECK(std::max_element(v.begin(), v.end()) - v.begin() ==
            std::max_element(zs.begin(), zs.end()) - zs.begin());
      CHECK(std::min_element(v.begin(), v.end()) - v.begin() ==
            std::min_element(zs.begin(), zs.end()) - zs.begin());
    }
  }
}

TEST_SUITE("resample") {
  TEST_CASE("identical rates leave a complete series unchanged") {
    const std::vector<double> v{0.25, -1.0, 3.5, 7.0};
    CHECK(resample_series(v, 2.0, 2.0) == v);
  }

  TEST_CASE("interior gap is filled linearly") {
    const auto out = resample_series(std::vector<double>{0, kMissing, 2}, 1.0, 1.0);
    REQUIRE(out.size() == 3);
    CHECK(out[1] == doctest::Approx(1.0));
  }

  TEST_CASE("categorical downsampling takes nearest neighbours") {
    const auto out = resample_series(std::vector<double>{1, 1, 2, 2}, 2.0, 1.0, true);
    CHECK(out == std::vector<double>{1, 2});
  }

  TEST_CASE("leading and trailing gaps stay missing") {
    const auto out = resample_series(std::vector<double>{kMissing, 1, 3, kMissing}, 1.0, 2.0);
    REQUIRE(out.size() == 7);
    CHECK(is_missing(out[0]));
    CHECK(is_missing(out[1]));
    CHECK(out[2] == 1.0);
    CHECK(out[3] == doctest::Approx(2.0));
    CHECK(out[4] == 3.0);
    CHECK(is_missing(out[5]));
    CHECK(is_missing(out[6]));
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(resample_series(std::vector<double>{}, 1.0, 1.0), ValidationError);
    CHECK_THROWS_AS(resample_series(std::vector<double>{1.0}, 0.0, 1.0), ValidationError);
  }

  TEST_CASE("property: endpoints on the output grid are preserved exactly") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t factor = 1 + trial % 4;
      std::vector<double> v(factor * (3 + trial % 5) + 1);
      for (double& x : v) x = u(rng);
      const auto down = resample_series(v, static_cast<double>(factor), 1.0);
      CHECK(down.front() == v.front());
      CHECK(down.back() == v.back());
      const auto up = resample_series(v, 1.0, static_cast<double>(factor));
      CHECK(up.front() == v.front());
      CHECK(up.back() == v.back());
    }
  }
}

TEST_SUITE("windows") {
  TEST_CASE("window counts") {
    CHECK(window_count(12, 8, 1, 1) == 4);
    CHECK(window_count(9, 8, 1, 1) == 1);
    CHECK(window_count(1000, 8, 1, 1) == 992);
    CHECK(window_count(20, 8, 1, 3) == 4);
    CHECK_THROWS_AS(window_count(8, 8, 1, 1), ValidationError);
  }

  TEST_CASE("boundary window targets the ninth sample") {
    std::vector<double> v;
    for (int i = 1; i <= 9; ++i) v.push_back(i);
    const auto w = make_windows(single_series(v), 8, 1, 1);
    REQUIRE(w.size() == 1);
    CHECK(w[0].inputs[0].size() == 8);
    CHECK(w[0].targets[0] == std::vector<double>{9});
  }

  TEST_CASE("property: no leakage and time ordering") {
    std::vector<double> v(60);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    VariableSpec st{"s", VariableKind::StaticNumerical};
    const Dataset d({series("x"), st}, {v, {42.0}});
    for (std::size_t stride : {1u, 2u, 5u}) {
      for (std::size_t horizon : {1u, 3u}) {
        const auto ws = make_windows(d, 8, horizon, stride);
        CHECK(ws.size() == window_count(60, 8, horizon, stride));
        for (std::size_t k = 0; k < ws.size(); ++k) {
          if (k) CHECK(ws[k].start > ws[k - 1].start);
          const double last_input = ws[k].inputs[0].back();
          CHECK(ws[k].targets[0].front() > last_input);
          CHECK(ws[k].inputs[1] == std::vector<double>{42.0});
          CHECK(ws[k].targets[1] == std::vector<double>{42.0});
        }
      }
    }
  }
}

TEST_CASE("dataset CSV + schema round trip is bit-exact") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1e3);
  std::vector<double> x(50), y(50), c(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = n(rng) / 7.0;
    y[i] = i % 7 == 0 ? kMissing : n(rng) * 1e-9;
    c[i] = i % 5 == 0 ? kMissing : static_cast<double>(1 + i % 3);
  }
  const Dataset d({series("x"), {"y", VariableKind::SeriesNumerical, 0, true, false},
                   {"c", VariableKind::SeriesCategorical, 3, false, true},
                   {"s", VariableKind::StaticNumerical}, {"k", VariableKind::StaticCategorical, 4}},
                  {x, y, c, {0.1 + 0.2}, {kMissing}});
  const auto dir = temp_dir("roundtrip");
  save_dataset_dir(d, dir);
  const Dataset back = load_dataset_dir(dir);
  CHECK(back.identical(d));
  save_dataset_dir(back, dir / "again");
  std::ifstream a(dir / "data.csv"), b(dir / "again" / "data.csv");
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("malformed CSV is rejected") {
  const auto dir = temp_dir("malformed");
  const Dataset d = single_series({1, 2, 3});
  save_dataset_dir(d, dir);
  {
    std::ofstream f(dir / "data.csv");
    f << "x\n1\nabc\n3\n";
  }
  CHECK_THROWS_AS(load_dataset_dir(dir), ValidationError);
  {
    std::ofstream f(dir / "data.csv");
    f << "x\n1\n2\n";
  }
  CHECK_THROWS_AS(load_dataset_dir(dir), ValidationError);
}

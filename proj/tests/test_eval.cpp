#include <doctest.h>

#include <cmath>
#include <sstream>

#include "clipot/eval.hpp"

using namespace clipot;

namespace {

ExperimentGrid small_grid() {
  ExperimentGrid grid;
  grid.scenario.d = 12;
  grid.scenario.K = 4;
  grid.scenario.M = 4;
  grid.scenario.n_per_class = 32;
  grid.base.batch_size = 32;
  grid.template_counts = {4};
  grid.seeds = {0, 1, 2};
  return grid;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("collapse metric") {
  CHECK(collapse_metric((VectorXi(4) << 0, 1, 2, 3).finished(), 4) == 0.25);
  CHECK(collapse_metric((VectorXi(4) << 2, 2, 2, 1).finished(), 4) == 0.75);
  CHECK_THROWS_AS(collapse_metric((VectorXi(1) << 4).finished(), 4), Error);
}

TEST_CASE("mean and sample std") {
  const auto ms = mean_and_std({1.0, 2.0, 4.0});
  CHECK(ms.mean == doctest::Approx(7.0 / 3));
  // sqrt(((1-7/3)^2 + (2-7/3)^2 + (4-7/3)^2) / 2)
  CHECK(ms.std == doctest::Approx(std::sqrt((16.0 / 9 + 1.0 / 9 + 25.0 / 9) / 2)));
  CHECK(mean_and_std({5.0}).std == 0.0);
}

TEST_CASE("noiseless zero-shot cell is perfect") {
  ExperimentGrid grid;
  grid.scenario.n_per_class = 16;
  grid.scenario.sample_noise = 0;
  grid.scenario.shift_kind = ShiftKind::none;
  grid.severities = {0.0};
  const auto rows = run_grid(grid);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].accuracy_mean == 100.0);
  CHECK(rows[0].accuracy_std == 0.0);
  CHECK(!rows[0].error);
}

TEST_CASE("grid covers every point in order") {
  auto grid = small_grid();
  grid.variants = {Variant::zero_shot, Variant::clip_ot};
  grid.epsilons = {0.5, 0.7};
  grid.template_counts = {1, 4};
  grid.severities = {0.2, 0.6};
  grid.jobs = 3;
  CHECK(grid.cells() == 16);
  const auto rows = run_grid(grid);
  REQUIRE(rows.size() == 16);
  CHECK(rows.front().variant == Variant::zero_shot);
  CHECK(rows.back().variant == Variant::clip_ot);
  CHECK(rows[1].templates == 4);
  CHECK(rows[2].epsilon == 0.7);
  CHECK(rows[4].severity == 0.6);
  for (const auto& r : rows) {
    CHECK(r.per_seed_accuracy.size() == 3);
    const auto ms = mean_and_std(r.per_seed_accuracy);
    CHECK(r.accuracy_mean == ms.mean);
    CHECK(r.accuracy_std == ms.std);
    CHECK(r.accuracy_mean >= 0);
    CHECK(r.accuracy_mean <= 100);
    CHECK(r.collapse_mean >= 0.25);
  }

  // Worker count does not change results.
  grid.jobs = 1;
  CHECK(render_csv(run_grid(grid)) == render_csv(rows));
}

TEST_CASE("failing cells are kept with an error marker") {
  auto grid = small_grid();
  grid.variants = {Variant::clip_ot};
  grid.epsilons = {0.05, 0.7};
  grid.base.stabilization = Stabilization::plain;
  const auto rows = run_grid(grid);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].error);
  CHECK(*rows[0].error == "NonFiniteKernel");
  CHECK(!rows[1].error);

  const auto csv = lines(render_csv(rows));
  REQUIRE(csv.size() == 3);
  CHECK(csv[1].find("ERR(NonFiniteKernel)") != std::string::npos);
  CHECK(render_markdown(rows).find("NonFiniteKernel") != std::string::npos);
}

TEST_CASE("csv format") {
  ResultRow row;
  row.variant = Variant::clip_ot;
  row.epsilon = 0.7;
  row.templates = 8;
  row.severity = 0.6;
  row.seeds = {0, 1, 2};
  row.per_seed_accuracy = {80, 81, 82};
  row.accuracy_mean = 81;
  row.accuracy_std = 1;
  row.collapse_mean = 0.125;
  row.wall_time_mean = 3.5;
  const auto csv = lines(render_csv({row}));
  REQUIRE(csv.size() == 2);
  CHECK(csv[0] == "variant,epsilon,templates,severity,seeds,accuracy_mean,accuracy_std,collapse_mean");
  CHECK(csv[1] == "clip_ot,0.7,8,0.6,0;1;2,81.0000,1.0000,0.1250");
  // Timings only appear in the timing report.
  CHECK(render_csv({row}).find("3.5") == std::string::npos);
  CHECK(render_timing_csv({row}).find("3.5") != std::string::npos);
  CHECK(render_markdown({row}, false).find("| clip_ot") != std::string::npos);
}

TEST_CASE("grid validation") {
  auto grid = small_grid();
  grid.template_counts = {5};
  CHECK_THROWS_AS(grid.validate(), Error);
  grid = small_grid();
  grid.seeds.clear();
  CHECK_THROWS_AS(grid.validate(), Error);
  grid = small_grid();
  grid.severities = {1.2};
  CHECK_THROWS_AS(grid.validate(), Error);
}

TEST_CASE("stream summary counts items and batches") {
  SyntheticShiftSpec spec;
  spec.d = 12;
  spec.K = 4;
  spec.M = 2;
  spec.n_per_class = 25;
  const auto s = generate_synthetic(spec);
  const ToyEncoder enc(ToyEncoderSpec::square(12, 0));
  AdaptConfig cfg;
  cfg.variant = Variant::tent;
  const auto summary = run_stream(enc, s.bank, s.batches(32), cfg);
  CHECK(summary.items == 100);
  CHECK(summary.batches == 4);

  cfg.variant = Variant::clip_ot;
  CHECK_THROWS_AS(run_embedding_stream(s.bank, s.batches(32), cfg), Error);
}

}  // TEST_SUITE

// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#include <doctest.h>

#include <filesystem>

#include "core/evalharness.hpp"
#include "core/rng.hpp"

using namespace weightgen;
namespace fs = std::filesystem;

TEST_CASE("task suites for both reference tracks validate") {
  TaskSuite residual;
  residual.id_tasks = {"CIFAR10", "CIFAR100"};
  residual.nood_tasks = {"TIN"};
  residual.food_tasks = {"SVHN", "EuroSAT"};
  residual.validate();
  CHECK(residual.id_tasks.size() == 2);

  TaskSuite cnn;
  cnn.id_tasks = {"MNIST", "SVHN"};
  cnn.nood_tasks = {"USPS"};
  cnn.food_tasks = {"FMNIST"};
  cnn.validate();

  TaskSuite bad;
  bad.id_tasks = {"A", "B"};
  bad.food_tasks = {"B"};
  CHECK_THROWS_AS(bad.validate(), Error);

  TaskSuite back = TaskSuite::from_json(residual.to_json());
  CHECK(back.id_tasks == residual.id_tasks);
  CHECK(back.food_tasks == residual.food_tasks);
}

TEST_CASE("ks statistic oracle bounds") {
  std::vector<float> a = {1, 2, 3, 4, 5};
  CHECK(ks_statistic(a, a) == 0.0);
  std::vector<float> b = {10, 11, 12};
  CHECK(ks_statistic(a, b) == 1.0);  // disjoint support
  // known half-overlap case: {1,2} vs {2,3}: D = 1/2
  CHECK(ks_statistic({1, 2}, {2, 3}) == doctest::Approx(0.5));
}

TEST_CASE("diagnostics: identity and squash signatures") {
  auto program = std::make_shared<ExecProgram>(make_program("mlp:6-5-4"));
  std::vector<ModelCheckpoint> orig, recon, squashed;
  for (uint64_t s = 0; s < 3; ++s) {
    ModelCheckpoint c = make_random_checkpoint(program, s);
    Rng rng(s);
    for (auto& [name, t] : c.tensors)
      for (auto& v : t.data) v = rng.normal_f();
    orig.push_back(c);
    recon.push_back(c);
    ModelCheckpoint sq = c;
    for (auto& [name, t] : sq.tensors)
      for (auto& v : t.data) v *= 0.1f;  // squashed toward the mean
    squashed.push_back(std::move(sq));
  }
  auto same = distribution_diagnostics(orig, recon);
  for (const auto& d : same) {
    CHECK(d.ks == 0.0);
    CHECK(d.std_ratio == doctest::Approx(1.0));
    CHECK(d.mean_diff == doctest::Approx(0.0));
  }
  auto sq = distribution_diagnostics(orig, squashed, 16);
  for (const auto& d : sq) {
    CHECK(d.std_ratio == doctest::Approx(0.1).epsilon(1e-3));
    CHECK(d.ks > 0.0);
    CHECK(d.hist_orig.size() == 16);
  }
  std::string js = diagnostics_to_json(sq);
  CHECK(js.find("std_ratio") != std::string::npos);

  std::vector<ModelCheckpoint> short_list(orig.begin(), orig.begin() + 2);
  CHECK_THROWS_AS(distribution_diagnostics(orig, short_list), Error);
}

TEST_CASE("report row renders the published reference values exactly") {
  EvalReport r;
  r.entries = {{"CIFAR10", "ID", 62.5, 0.9},
               {"CIFAR100", "ID", 32.0, 0.4},
               {"TIN", "NOOD", 27.2, 0.2},
               {"SVHN", "FOOD", 53.9, 1.3},
               {"EuroSAT", "FOOD", 72.1, 1.2}};
  r.recompute();
  CHECK(render_report_row(r) ==
        "62.5±0.9 | 32.0±0.4 | 27.2±0.2 | 53.9±1.3 | 72.1±1.2 | "
        "49.5±0.8");
  CHECK(r.avg_mean == doctest::Approx(49.54));
  CHECK(r.id_avg == doctest::Approx(47.25));
  std::string table = render_report_text(r);
  CHECK(table.find("ID | ID | NOOD | FOOD | FOOD | AVG") != std::string::npos);
  CHECK(table.find("62.5±0.9") != std::string::npos);
}

TEST_CASE("empty report renders a header-only table") {
  EvalReport r;
  r.recompute();
  CHECK(render_report_text(r) == "AVG\n");
}

TEST_CASE("structured report round-trips exactly") {
  EvalReport r;
  r.entries = {{"synth:digits-a", "ID", 81.25, 1.5},
               {"synth:digits-b", "ID", 74.0, 2.25},
               {"synth:shapes", "FOOD", 31.779296875, 0.5}};
  r.model_id = "sane-test";
  r.spec_note = "unit";
  r.seed = 7;
  r.recompute();
  EvalReport back = EvalReport::from_json(r.to_json());
  CHECK(back == r);
}

TEST_CASE("group averages recompute exactly from entries") {
  Rng rng(3);
  EvalReport r;
  const char* groups[] = {"ID", "ID", "NOOD", "FOOD"};
  for (int i = 0; i < 4; ++i)
    r.entries.push_back({"t" + std::to_string(i), groups[i], rng.uniform(0, 100),
                         rng.uniform(0, 3)});
  r.recompute();
  double id = (r.entries[0].mean + r.entries[1].mean) / 2;
  CHECK(r.id_avg == id);
  CHECK(r.nood_avg == r.entries[2].mean);
  CHECK(r.food_avg == r.entries[3].mean);
  double avg = 0;
  for (const auto& e : r.entries) avg += e.mean;
  CHECK(r.avg_mean == avg / 4);
}

TEST_CASE("evaluate_models: degenerate single model, side effects, and skips") {
  auto program = std::make_shared<ExecProgram>(make_program("toy_mlp_bn"));
  ModelCheckpoint m = make_random_checkpoint(program, 5);
  m.meta.image_dataset = "synth:digits-a";
  uint64_t before = trainable_hash(m);

  TaskSuite suite;
  suite.id_tasks = {"synth:digits-a"};
  suite.food_tasks = {"threeclass"};

  // a 3-class on-disk dataset triggers the head-width skip path
  fs::path root = fs::temp_directory_path() / "weightgen_eval_root";
  fs::remove_all(root);
  Dataset tri = make_synthetic_dataset("synth:shapes", Split::test, 30, 1);
  tri.num_classes = 3;
  for (auto& l : tri.labels) l %= 3;
  Dataset tri_train = make_synthetic_dataset("synth:shapes", Split::train, 30, 1);
  tri_train.num_classes = 3;
  for (auto& l : tri_train.labels) l %= 3;
  save_dataset_dir(root / "threeclass", "threeclass",
                   {{Split::train, tri_train}, {Split::test, tri}});

  EvalReport report = evaluate_models({m}, suite, root.string(), 11);
  REQUIRE(report.entries.size() == 2);
  CHECK(report.entries[0].stddev == 0.0);  // single model
  CHECK(report.entries[1].skipped);
  CHECK(report.entries[1].skip_reason.find("classes") != std::string::npos);
  CHECK(trainable_hash(m) == before);  // evaluation is side-effect free
  // AVG excludes skipped entries
  CHECK(report.avg_mean == report.entries[0].mean);
}

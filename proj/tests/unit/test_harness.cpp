#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "cirm/error.hpp"
#include "cirm/harness.hpp"
#include "cirm/nd/losses.hpp"

using namespace cirm;

TEST_SUITE("harness") {

TEST_CASE("auc closed forms") {
  CHECK(auc(Vec{1.0, 1.0, 1.0}) == doctest::Approx(2.0));
  CHECK(auc(Vec{0.0, 1.0}) == doctest::Approx(0.5));
  // linear ramp 0..T integrates to T^2 / 2
  Vec ramp;
  for (int t = 0; t <= 10; ++t) ramp.push_back(t);
  CHECK(auc(ramp) == doctest::Approx(50.0));
  CHECK(auc(Vec{3.0, 1.0, 2.0}) == doctest::Approx(2.0 + 1.5));
  CHECK_THROWS_AS(auc(Vec{1.0}), ValueError);

  Curve c;
  c.t = {0, 1, 2};
  c.value = {1.0, 0.5, 0.0};
  CHECK(auc(c) == doctest::Approx(1.0));
  c.t = {0, 2, 3};
  CHECK_THROWS_AS(auc(c), ValueError);
}

TEST_CASE("step 0 of the curves is the plain model") {
  const GenerativeWorld w = build_world(preset_spec("small", 2));
  const DatasetSplits data = sample_splits(w, 10, 10, 200, 4);
  CbmConfig c;
  c.input_dim = w.input_dim;
  c.num_concepts = w.num_concepts;
  c.num_classes = w.num_classes;
  CbmModel m(c);
  m.init(1);
  RealignerConfig rc;
  Realigner r(w.num_concepts, rc);
  r.init(2);
  const auto units = SelectionUnits::concepts(w.num_concepts);
  for (const Realigner* rp : std::vector<const Realigner*>{nullptr, &r}) {
    const CurvePair cp = evaluate_curves(m, rp, PolicyKind::ucp(), w.num_concepts, data.test, units);
    REQUIRE(cp.accuracy.value.size() == w.num_concepts + 1);
    CHECK(cp.accuracy.value[0] == doctest::Approx(task_accuracy(m, data.test)).epsilon(1e-12));
    CHECK(cp.concept_loss.value[0] == doctest::Approx(concept_bce(m, data.test)).epsilon(1e-12));
    CHECK(cp.concept_loss.n_samples == 200);
    // full intervention reaches the clamp floor
    CHECK(cp.concept_loss.value.back() == doctest::Approx(clamp_floor_loss()).epsilon(1e-9));
  }
}

TEST_CASE("experiment config json round trip") {
  ExperimentConfig c = default_experiment_config();
  c.n_train = 123;
  c.realigner.arch = RealignerArch::recurrent;
  c.realigner_width_factor = 0.5;
  c.eval_policy = PolicyKind::random(9);
  const ExperimentConfig back = experiment_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(resolved_realigner_config(back, 16).hidden_width == 8);
}

TEST_CASE("resolve_world accepts presets and files") {
  CHECK(resolve_world("small", 3).name == "small");
  const auto path = std::filesystem::temp_directory_path() / "cirm-unit-w.json";
  save_world(path, build_world(preset_spec("small", 4)));
  const WorldEntry e = resolve_world(path.string(), 0);
  CHECK(e.name == "cirm-unit-w");
  CHECK(e.world.seed == 4);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(resolve_world("no-such-world", 1), ValueError);
}

TEST_CASE("benchmark reports failing cells without aborting") {
  SuiteSpec spec;
  spec.worlds = {"small", "no-such-world"};
  spec.kinds = {ModelKind::sequential};
  spec.seeds = {1};
  spec.config.n_train = 200;
  spec.config.n_val = 50;
  spec.config.n_test = 50;
  spec.config.model_train.max_epochs = 2;
  spec.config.realigner.train.max_epochs = 2;
  const BenchmarkResult res = run_benchmark(spec);
  REQUIRE(res.errors.size() == 1);
  CHECK(res.errors[0].world == "no-such-world");
  CHECK(res.rows.size() == 2);  // baseline and realigned
  CHECK(res.table.size() == 2);
  CHECK_FALSE(res.table[0].realigned);
  CHECK(res.table[1].realigned);
}

}  // TEST_SUITE

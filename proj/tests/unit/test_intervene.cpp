#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "cirm/error.hpp"
#include "cirm/intervene.hpp"
#include "cirm/models.hpp"
#include "cirm/policy.hpp"
#include "cirm/realign_train.hpp"
#include "cirm/realigner.hpp"

using namespace cirm;

namespace {

CbmModel small_cbm(std::uint64_t seed, CbmScheme scheme = CbmScheme::sequential) {
  CbmConfig c;
  c.input_dim = 5;
  c.num_concepts = 4;
  c.num_classes = 3;
  c.scheme = scheme;
  CbmModel m(c);
  m.init(seed);
  return m;
}

Realigner small_realigner(RealignerArch arch, RealignerInput mode, std::uint64_t seed) {
  RealignerConfig c;
  c.arch = arch;
  c.input_mode = mode;
  Realigner r(4, c);
  r.init(seed);
  return r;
}

const Vec kX{0.3, -1.0, 0.5, 2.0, 0.1};
const Vec kTruth{1.0, 0.0, 0.0, 1.0};

}  // namespace

TEST_SUITE("intervene") {

TEST_CASE("ucp picks the most uncertain open unit, ties to the lowest index") {
  CHECK(ucp_select(Vec{0.9, 0.45, 0.2, 0.55}, {}) == 1);
  CHECK(ucp_select(Vec{0.9, 0.45, 0.2, 0.55}, {1}) == 3);
  CHECK(ucp_select(Vec{0.9, 0.45, 0.2, 0.55}, {1, 3}) == 2);
  CHECK_THROWS_AS(ucp_select(Vec{0.5, 0.5}, {0, 1}), StateError);

  // groups {0,1} and {2,3}: min distance picks the group holding 0.52, mean the other
  SelectionUnits units = SelectionUnits::from_groups(4, {{"a", {0, 1}}, {"b", {2, 3}}});
  CHECK(units.size() == 2);
  const Vec p{0.52, 0.99, 0.4, 0.6};
  CHECK(ucp_select(p, {0, 0}, units, GroupScore::min) == 0);
  CHECK(ucp_select(p, {0, 0}, units, GroupScore::mean) == 1);
}

TEST_CASE("ungrouped concepts become singleton units") {
  const SelectionUnits units = SelectionUnits::from_groups(5, {{"g", {1, 3}}});
  CHECK(units.size() == 4);
  CHECK(units.grouped());
  std::size_t covered = 0;
  for (const auto& m : units.members) covered += m.size();
  CHECK(covered == 5);
}

TEST_CASE("random policy never repeats and exhausts every unit") {
  Rng rng(5);
  std::set<std::size_t> done;
  for (int t = 0; t < 6; ++t) {
    const std::size_t u = random_select(rng, 6, done);
    CHECK(done.count(u) == 0);
    done.insert(u);
  }
  CHECK_THROWS_AS(random_select(rng, 6, done), StateError);
}

TEST_CASE("apply_intervention writes ground truth and rejects misuse") {
  const InterventionState s0 = initial_state(Vec{0.2, 0.7, 0.5}, 3);
  const InterventionState s1 = apply_intervention(s0, 1, 0.0);
  CHECK(s1.t == 1);
  CHECK(s1.values == Vec{0.2, 0.0, 0.5});
  CHECK(s1.intervened() == std::set<std::size_t>{1});
  REQUIRE(s1.history.size() == 1);
  CHECK(s1.history[0].old_value == 0.7);
  CHECK_THROWS_AS(apply_intervention(s1, 1, 1.0), StateError);
  CHECK_THROWS_AS(apply_intervention(s1, 0, 0.5), ValueError);
  CHECK_THROWS_AS(apply_intervention(s1, 7, 1.0), ValueError);
}

TEST_CASE("splice and realign_masked keep intervened entries bitwise") {
  const Vec base{0.1, 0.2, 0.3};
  const Vec vals{1.0, 0.0, 1.0};
  CHECK(splice(base, vals, {1, 0, 1}) == Vec{1.0, 0.2, 1.0});

  const Realigner r = small_realigner(RealignerArch::feedforward, RealignerInput::original, 3);
  const Vec c{0.0, 0.37, 1.0, 0.81};
  const Vec out = realign_masked(r, c, {0, 2});
  CHECK(out[0] == 0.0);
  CHECK(out[2] == 1.0);
  const Vec net = r.crm_forward(c);
  CHECK(out[1] == net[1]);
  CHECK(out[3] == net[3]);
  CHECK_THROWS_AS(realign_masked(r, c, {9}), ValueError);
}

TEST_CASE("identity realigner returns its input") {
  const Realigner r = small_realigner(RealignerArch::identity, RealignerInput::original, 0);
  CHECK(r.parameters().empty());
  const Vec c{0.25, 0.5, 0.75, 0.125};
  CHECK(r.crm_forward(c) == c);
}

TEST_CASE("a residual realigner with a zeroed output layer is the identity") {
  Realigner r = small_realigner(RealignerArch::feedforward, RealignerInput::original, 1);
  // zero every parameter of the last layer
  ParamRefs params = r.parameters();
  std::fill(params[params.size() - 1]->values.begin(), params[params.size() - 1]->values.end(), 0.0);
  std::fill(params[params.size() - 2]->values.begin(), params[params.size() - 2]->values.end(), 0.0);
  const Vec c{0.25, 0.5, 0.75, 0.125};
  const Vec out = r.crm_forward(c);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(out[i] == doctest::Approx(c[i]).epsilon(1e-12));
}

TEST_CASE("trajectory runner: step 0 reads c_hat, later steps splice truth") {
  const CbmModel m = small_cbm(4);
  const Realigner r = small_realigner(RealignerArch::recurrent, RealignerInput::previous_output, 2);
  TrajectoryRunner run(m, &r, kX, SelectionUnits::concepts(4), kTruth, 2);
  const ConceptPrediction pred = m.predict_concepts(kX);
  REQUIRE(run.records().size() == 1);
  CHECK(run.records()[0].concepts == pred.probs);
  CHECK(run.records()[0].logits == m.predict_logits(pred, pred.probs));

  run.intervene(2);
  run.intervene(0);
  const StepRecord& last = run.records().back();
  CHECK(last.t == 2);
  CHECK(last.concepts[0] == 1.0);
  CHECK(last.concepts[2] == 0.0);
  CHECK(last.S == std::vector<std::size_t>{0, 2});
  CHECK(last.logits == m.predict_logits(pred, last.concepts));
  CHECK_THROWS_AS(run.intervene(2), StateError);
  CHECK_THROWS_AS(run.intervene(4), ValueError);
  run.intervene(1);
  run.intervene(3);
  CHECK(run.complete());
  CHECK(run.current() == kTruth);
}

TEST_CASE("run_trajectory matches the runner driven by hand") {
  const CbmModel m = small_cbm(6);
  const Realigner r = small_realigner(RealignerArch::feedforward, RealignerInput::original, 8);
  const SampleRecord s{kX, kTruth, 1};
  const auto units = SelectionUnits::concepts(4);
  const TrajectoryResult res = run_trajectory(m, &r, PolicyKind::ucp(), 3, s, units);
  REQUIRE(res.steps.size() == 4);
  TrajectoryRunner run(m, &r, kX, units, kTruth, 1);
  for (std::size_t t = 1; t <= 3; ++t) {
    const std::size_t u = ucp_select(run.current(), run.state().intervened());
    CHECK(res.steps[t].unit == u);
    run.intervene(u);
    CHECK(res.steps[t].concepts == run.current());
  }
  CHECK_THROWS_AS(run_trajectory(m, &r, PolicyKind::ucp(), 5, s, units), ValueError);

  // same policy seed and stream, same trajectory
  const auto a = run_trajectory(m, &r, PolicyKind::random(3), 4, s, units, 7);
  const auto b = run_trajectory(m, &r, PolicyKind::random(3), 4, s, units, 7);
  for (std::size_t t = 1; t <= 4; ++t) CHECK(a.steps[t].unit == b.steps[t].unit);
}

TEST_CASE("manual policy follows its sequence") {
  const CbmModel m = small_cbm(6);
  const SampleRecord s{kX, kTruth, 1};
  const auto res =
      run_trajectory(m, nullptr, PolicyKind::manual({3, 1, 0}), 3, s, SelectionUnits::concepts(4));
  CHECK(res.steps[1].unit == 3);
  CHECK(res.steps[2].unit == 1);
  CHECK(res.steps[3].unit == 0);
}

TEST_CASE("full intervention on an independent CBM feeds the truth to f") {
  const CbmModel m = small_cbm(9, CbmScheme::independent);
  const SampleRecord s{kX, kTruth, 0};
  const auto res = run_trajectory(m, nullptr, PolicyKind::ucp(), 4, s, SelectionUnits::concepts(4));
  CHECK(res.steps.back().concepts == kTruth);
  CHECK(res.steps.back().logits == m.head_logits(kTruth));
}

TEST_CASE("cem mix and overrides") {
  CHECK(cem_mix(0.25, Vec{4.0, 0.0}, Vec{0.0, 8.0}) == Vec{1.0, 6.0});
  CHECK_THROWS_AS(cem_mix(1.5, Vec{1.0}, Vec{0.0}), ValueError);
  CemConfig c;
  c.input_dim = 5;
  c.num_concepts = 4;
  c.num_classes = 3;
  c.embedding_width = 3;
  CemModel m(c);
  m.init(2);
  const CemOutput plain = cem_forward(m, kX);
  const CemOutput forced = cem_forward(m, kX, {{1, 1.0}});
  const auto emb = cem_concept_embed(m, kX);
  for (std::size_t j = 0; j < 3; ++j) CHECK(forced.mixed[3 + j] == emb[1].c_plus[j]);
  CHECK(plain.mixed[0] == forced.mixed[0]);
  const ConceptPrediction pred = m.predict_concepts(kX);
  Vec conc = pred.probs;
  conc[1] = 1.0;
  CHECK(m.predict_logits(pred, conc) == forced.logits);
}

TEST_CASE("model save/load round trip and kinds") {
  const auto dir = std::filesystem::temp_directory_path() / "cirm-unit-models";
  CbmModel cbm = small_cbm(11, CbmScheme::joint);
  save_model(dir / "cbm.json", cbm);
  const auto back = load_model(dir / "cbm.json");
  CHECK(back->kind() == ModelKind::joint);
  CHECK(back->checksum() == cbm.checksum());
  const ConceptPrediction p = back->predict_concepts(kX);
  CHECK(p.probs == cbm.predict_concepts(kX).probs);

  Realigner r = small_realigner(RealignerArch::recurrent, RealignerInput::original, 5);
  save_realigner(dir / "r.json", r, cbm.checksum());
  const LoadedRealigner lr = load_realigner(dir / "r.json");
  CHECK(lr.base_checksum == cbm.checksum());
  CHECK(lr.realigner.checksum() == r.checksum());
  CHECK(lr.realigner.config().arch == RealignerArch::recurrent);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_model(dir / "cbm.json"), IoError);
  CHECK_THROWS_AS(model_kind_from_string("resnet"), ValueError);
}

TEST_CASE("posthoc training requires a frozen base") {
  CbmModel m = small_cbm(3);
  const Dataset data{{kX, kTruth, 0}, {kX, kTruth, 1}};
  RealignerConfig rc;
  rc.train.max_epochs = 1;
  CHECK_THROWS_AS(
      train_realigner_posthoc(m, data, data, SelectionUnits::concepts(4), rc, 1), StateError);
  m.freeze();
  const PosthocResult res =
      train_realigner_posthoc(m, data, data, SelectionUnits::concepts(4), rc, 1);
  CHECK(res.base_checksum == m.checksum());
}

}  // TEST_SUITE

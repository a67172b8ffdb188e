// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes. `--only 3,11` runs a subset; `--keep` keeps the
// scratch directory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>

#include "cirm/error.hpp"
#include "cirm/error.hpp"
#include "cirm/harness.hpp"
#include "cirm/intervene.hpp"
#include "cirm/models.hpp"
#include "cirm/nd/gradcheck.hpp"
#include "cirm/nd/losses.hpp"
#include "cirm/realign_train.hpp"
#include "cirm/realigner.hpp"
#include "cirm/world.hpp"

namespace fs = std::filesystem;
using namespace cirm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_scratch;
// Checkpoint cache; --cache lets separate processes share it.
fs::path g_cache;

// Shared by criteria 3-8 so each model and realigner trains once.
ExperimentConfig experiment() {
  ExperimentConfig c = default_experiment_config();
  c.cache_dir = g_cache;
  c.log = [](const std::string& line) { std::cerr << "  .. " << line << std::endl; };
  return c;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

Vec random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

Vec random_bits(Rng& rng, std::size_t n) {
  std::bernoulli_distribution b(0.5);
  Vec v(n);
  for (double& x : v) x = b(rng) ? 1.0 : 0.0;
  return v;
}

SampleRecord random_sample(Rng& rng, std::size_t d, std::size_t k, std::size_t M) {
  return {random_vec(rng, d, -1.5, 1.5), random_bits(rng, k), rng() % M};
}

// Fresh biases are exactly zero, which can park a relu pre-activation on its
// kink; checks run at a generic point instead.
void jitter(const ParamRefs& params, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (ParamTensor* p : params) {
    for (double& v : p->values) v += u(rng);
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ----------------------------------------------------------------------------
// 1. gradient correctness

Outcome criterion_gradients() {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto record = [&](const std::string& name, const ParamRefs& params, const LossFn& fn) {
    const GradCheckResult r = grad_check(params, fn);
    ++checks;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = name + " (" + r.worst_param + ")";
    }
  };
  Rng rng(101);

  {
    Linear lin("lin", 4, 3);
    lin.init(rng);
    jitter({&lin.weight, &lin.bias}, rng);
    const Vec x = random_vec(rng, 4, -1, 1), w = random_vec(rng, 3, -1, 1);
    ParamRefs p;
    lin.append_parameters(p);
    record("linear", p, [&](bool acc) {
      const Vec y = lin.forward(x);
      double v = 0.0;
      for (std::size_t i = 0; i < 3; ++i) v += w[i] * y[i] * y[i];
      if (acc) {
        Vec dy(3);
        for (std::size_t i = 0; i < 3; ++i) dy[i] = 2.0 * w[i] * y[i];
        lin.backward(x, dy);
      }
      return v;
    });
  }
  for (Activation act : {Activation::relu, Activation::sigmoid, Activation::identity}) {
    Mlp net("mlp", {5, 7, 6, 4}, act);
    net.init(rng);
    jitter(net.parameters(), rng);
    const Vec x = random_vec(rng, 5, -1, 1);
    const Vec t = random_bits(rng, 4);
    record("mlp+bce", net.parameters(), [&](bool acc) {
      MlpCache cache;
      const Vec p = sigmoid(net.forward(x, &cache));
      const LossGrad lg = bce_loss_grad(p, t);
      if (acc) net.backward(cache, sigmoid_backward(p, lg.grad));
      return lg.value;
    });
    record("mlp+ce", net.parameters(), [&](bool acc) {
      MlpCache cache;
      const LossGrad lg = ce_loss_grad(net.forward(x, &cache), 1);
      if (acc) net.backward(cache, lg.grad);
      return lg.value;
    });
  }
  {
    LstmCell cell("lstm", 3, 5);
    cell.init(rng);
    std::vector<Vec> xs;
    for (int t = 0; t < 4; ++t) xs.push_back(random_vec(rng, 3, -1, 1));
    const Vec w = random_vec(rng, 5, -1, 1);
    ParamRefs p;
    cell.append_parameters(p);
    record("lstm", p, [&](bool acc) {
      RecurrentState s = cell.zero_state();
      std::vector<LstmCache> caches(xs.size());
      for (std::size_t t = 0; t < xs.size(); ++t) s = cell.step(s, xs[t], &caches[t]);
      double v = 0.0;
      for (std::size_t j = 0; j < 5; ++j) v += w[j] * s.hidden[j] + 0.5 * s.cell[j] * s.cell[j];
      if (acc) {
        Vec dh = w, dc = s.cell;
        for (std::size_t t = xs.size(); t-- > 0;) {
          auto g = cell.backward(caches[t], dh, dc);
          dh = g.d_hidden_prev;
          dc = g.d_cell_prev;
        }
      }
      return v;
    });
  }

  const auto units = SelectionUnits::concepts(4);
  // IntCEM prediction term alone, then the full intervention-aware loss.
  for (const auto& [name, ic] :
       std::vector<std::pair<std::string, IntCemConfig>>{
           {"L_pred", {1.5, 0.0, 0.0, LengthDistribution::uniform, 0}},
           {"intcem total", {1.5, 0.8, 0.6, LengthDistribution::uniform, 0}}}) {
    CemModel m({5, 4, 3, 3, 8, 2, 1.0, {}, true, true});
    m.init(7);
    jitter(m.parameters(), rng);
    for (std::size_t T : {0, 2, 4}) {
      const SampleRecord s = random_sample(rng, 5, 4, 3);
      std::vector<std::size_t> traj;
      for (std::size_t t = 0; t < T; ++t) traj.push_back((3 * t + 1) % 4);
      record(name, m.parameters(),
             [&](bool acc) { return intcem_loss(m, s, traj, units, ic, acc).total; });
    }
  }
  {
    ParamTensor c_hat("c_hat", {4}), k0("kappa0", {4}), kT("kappaT", {4});
    c_hat.values = random_vec(rng, 4, 0.05, 0.95);
    k0.values = random_vec(rng, 4, 0.05, 0.95);
    kT.values = random_vec(rng, 4, 0.05, 0.95);
    const Vec c = random_bits(rng, 4);
    record("L_conc-ReA", {&c_hat, &k0, &kT}, [&](bool acc) {
      const ConcReaLoss l = conc_rea_loss(c_hat.values, c, k0.values, kT.values, 1.3, 3);
      if (acc) {
        for (std::size_t i = 0; i < 4; ++i) {
          c_hat.grad[i] += l.d_c_hat[i];
          k0.grad[i] += l.d_kappa0[i];
          kT.grad[i] += l.d_kappaT[i];
        }
      }
      return l.value;
    });
  }
  for (auto arch : {RealignerArch::feedforward, RealignerArch::recurrent}) {
    for (auto mode : {RealignerInput::original, RealignerInput::previous_output}) {
      RealignerConfig rc;
      rc.arch = arch;
      rc.input_mode = mode;
      rc.hidden_width = 6;
      const std::string tag = to_string(arch) + "/" + to_string(mode);
      Realigner r(4, rc);
      r.init(8);
      jitter(r.parameters(), rng);
      const Vec c_hat = random_vec(rng, 4, 0.1, 0.9);
      const Vec c = random_bits(rng, 4);
      const std::vector<std::size_t> traj{1, 3, 0};
      record("posthoc " + tag, r.parameters(),
             [&](bool acc) { return posthoc_loss(r, c_hat, c, units, traj, true, acc); });

      CemModel m({5, 4, 3, 3, 8, 2, 1.0, {}, true, true});
      m.init(9);
      jitter(m.parameters(), rng);
      ParamRefs params = m.parameters();
      for (ParamTensor* p : r.parameters()) params.push_back(p);
      const IntCemConfig ic{1.2, 0.9, 0.5, LengthDistribution::uniform, 0};
      for (std::size_t T : {0, 2}) {
        const SampleRecord s = random_sample(rng, 5, 4, 3);
        std::vector<std::size_t> tr;
        for (std::size_t t = 0; t < T; ++t) tr.push_back((t + 2) % 4);
        record("intcem_rea total " + tag, params,
               [&](bool acc) { return intcem_rea_loss(m, r, s, tr, units, ic, acc).total; });
      }
    }
  }
  return {worst <= 1e-4, std::to_string(checks) + " checks, max rel error " + fmt(worst, 3) +
                             (worst_name.empty() ? "" : " at " + worst_name)};
}

// ----------------------------------------------------------------------------
// 2. masking exactness

Outcome criterion_masking() {
  Rng rng(202);
  const std::size_t k = 9;
  std::vector<Realigner> nets;
  for (auto arch : {RealignerArch::feedforward, RealignerArch::recurrent}) {
    RealignerConfig rc;
    rc.arch = arch;
    rc.hidden_width = 12;
    nets.emplace_back(k, rc);
    nets.back().init(3);
  }
  std::size_t mismatches = 0, cases = 0;
  std::bernoulli_distribution coin(0.5);
  for (; cases < 10000; ++cases) {
    const Realigner& r = nets[cases % nets.size()];
    Vec values = random_vec(rng, k, 0.0, 1.0);
    std::set<std::size_t> S;
    for (std::size_t i = 0; i < k; ++i) {
      if (coin(rng)) {
        S.insert(i);
        values[i] = coin(rng) ? 1.0 : 0.0;
      }
    }
    const Vec out = realign_masked(r, values, S);
    const Vec net = r.crm_forward(values);
    for (std::size_t i = 0; i < k; ++i) {
      const double expect = S.count(i) ? values[i] : net[i];
      if (std::memcmp(&out[i], &expect, sizeof(double)) != 0) ++mismatches;
    }
  }
  std::size_t full_mismatch = 0;
  for (const Realigner& r : nets) {
    for (int rep = 0; rep < 50; ++rep) {
      const Vec values = random_bits(rng, k);
      std::set<std::size_t> all;
      for (std::size_t i = 0; i < k; ++i) all.insert(i);
      const Vec out = realign_masked(r, values, all);
      if (std::memcmp(out.data(), values.data(), k * sizeof(double)) != 0) ++full_mismatch;
    }
  }
  return {mismatches == 0 && full_mismatch == 0,
          std::to_string(cases) + " cases, " + std::to_string(mismatches) +
              " entry mismatches, " + std::to_string(full_mismatch) + " full-mask mismatches"};
}

// ----------------------------------------------------------------------------
// 3. oracle equivalence

Outcome criterion_oracle() {
  // With a zero emission matrix x carries no information, so the best
  // concept estimate after observing c_S is exactly p(c_i | c_S). A small
  // noise scale keeps the encoder from turning pure noise into spurious
  // per-sample variation in c_hat.
  WorldSpec spec = preset_spec("small", 3);
  std::fill(spec.emission.begin(), spec.emission.end(), 0.0);
  spec.noise_scale = 0.05;
  const GenerativeWorld world = build_world(spec);
  ExperimentConfig cfg = experiment();
  Workbench wb = make_workbench("small-uninformative", world, 3, cfg);
  RealignerConfig rc = resolved_realigner_config(cfg, world.num_concepts);
  rc.training_policy = PolicyKind::random(33);
  const ConceptModel& model = wb.model(ModelKind::sequential);
  const Realigner& r = wb.realigner(ModelKind::sequential, rc);

  double sum = 0.0;
  std::size_t n = 0;
  for (const SampleRecord& s : wb.data.test) {
    for (std::size_t j = 0; j < world.num_concepts; ++j) {
      TrajectoryRunner runner(model, &r, s.x, wb.units, s.c, s.y);
      runner.intervene(j);
      const Vec& kappa = runner.current();
      const std::map<std::size_t, int> evidence{{j, static_cast<int>(s.c[j])}};
      for (std::size_t i = 0; i < world.num_concepts; ++i) {
        if (i == j) continue;
        sum += std::abs(kappa[i] - exact_conditional(world, evidence, i));
        ++n;
      }
    }
  }
  const double mae = sum / static_cast<double>(n);
  return {mae <= 0.05, "mean |kappa - p(c_i | c_S)| = " + fmt(mae) + " over " + std::to_string(n) +
                           " off-mask entries (threshold 0.05)"};
}

// ----------------------------------------------------------------------------
// 4-5. dominance and full-intervention limits

std::optional<BenchmarkResult> g_benchmark;

const BenchmarkResult& benchmark() {
  if (!g_benchmark) {
    SuiteSpec spec;
    spec.worlds = {"small", "medium"};
    spec.seeds = kSeeds;
    spec.config = experiment();
    g_benchmark = run_benchmark(spec);
  }
  return *g_benchmark;
}

Outcome criterion_dominance() {
  const BenchmarkResult& res = benchmark();
  std::size_t cells = 0, failed = 0;
  std::ostringstream why;
  double worst_ratio = 0.0, worst_dt = -1e9, worst_acc_gap = -1e9;
  for (std::size_t i = 0; i + 1 < res.curves.size(); i += 2) {
    const CurveRecord& b = res.curves[i];
    const CurveRecord& a = res.curves[i + 1];
    if (b.realigned || !a.realigned || b.label != a.label || b.seed != a.seed) {
      return {false, "curve records out of order"};
    }
    ++cells;
    double dt = -1e9;
    for (std::size_t t = 0; t < b.curves.concept_loss.value.size(); ++t) {
      dt = std::max(dt, a.curves.concept_loss.value[t] - b.curves.concept_loss.value[t]);
    }
    const double ratio = auc(a.curves.concept_loss) / auc(b.curves.concept_loss);
    const double acc_gap = auc(b.curves.accuracy) - auc(a.curves.accuracy);
    worst_ratio = std::max(worst_ratio, ratio);
    worst_dt = std::max(worst_dt, dt);
    worst_acc_gap = std::max(worst_acc_gap, acc_gap);
    if (dt > 1e-3 || ratio > 0.8 || acc_gap > 1e-6) {
      ++failed;
      why << " [" << a.world << "/" << a.label << "/seed " << a.seed << ": ratio " << fmt(ratio)
          << ", max dt " << fmt(dt, 3) << ", acc gap " << fmt(acc_gap, 3) << "]";
    }
  }
  const std::size_t expected = 2 * 4 * kSeeds.size();
  for (const auto& e : res.errors) why << " [error " << e.world << "/" << e.label << ": " << e.message << "]";
  return {failed == 0 && cells == expected && res.errors.empty(),
          std::to_string(cells) + "/" + std::to_string(expected) + " cells, worst AUC ratio " +
              fmt(worst_ratio) + ", worst per-t excess " + fmt(worst_dt, 3) +
              ", worst accuracy AUC drop " + fmt(worst_acc_gap, 3) + why.str()};
}

Outcome criterion_full_intervention() {
  const BenchmarkResult& res = benchmark();
  // -log(1 - 1e-7) via log1p: forming 1 - 1e-7 first rounds away ~5e-17.
  // The curve value is a mean of means, so allow a few ulps of summation error.
  const double floor = -std::log1p(-1e-7);
  const double floor_tol = 1e-12 * floor;
  double worst_bce = 0.0;
  std::size_t curves = 0;
  for (const auto& rec : res.curves) {
    worst_bce = std::max(worst_bce, rec.curves.concept_loss.value.back());
    ++curves;
  }
  // Independent CBM at T = k against f applied to ground truth.
  std::size_t acc_checks = 0, acc_fail = 0;
  std::ostringstream why;
  for (const std::string world_name : {"small", "medium"}) {
    for (auto seed : kSeeds) {
      const WorldEntry entry = resolve_world(world_name, seed);
      Workbench wb = make_workbench(entry.name, entry.world, seed, experiment());
      const auto& cbm = dynamic_cast<const CbmModel&>(wb.model(ModelKind::independent));
      std::size_t correct = 0;
      for (const auto& s : wb.data.test) correct += argmax(cbm.head_logits(s.c)) == s.y;
      const double oracle = static_cast<double>(correct) / static_cast<double>(wb.data.test.size());
      for (const auto& rec : res.curves) {
        if (rec.world != entry.name || rec.seed != seed || rec.label != "independent") continue;
        ++acc_checks;
        const double got = rec.curves.accuracy.value.back();
        if (got != oracle) {
          ++acc_fail;
          why << " [" << world_name << " seed " << seed << (rec.realigned ? " realigned" : "")
              << ": " << got << " vs " << oracle << "]";
        }
      }
    }
  }
  const bool bce_ok = curves > 0 && worst_bce <= floor + floor_tol;
  return {bce_ok && acc_fail == 0 && acc_checks == 2 * 2 * kSeeds.size(),
          "max T=k concept bce " + fmt(worst_bce, 17) + " (floor " + fmt(floor, 17) + ") over " +
              std::to_string(curves) + " curves; independent accuracy matches f(c) in " +
              std::to_string(acc_checks - acc_fail) + "/" + std::to_string(acc_checks) + why.str()};
}

// ----------------------------------------------------------------------------
// 6-8. policy findings

AblationResult ablation(AblationKind kind) {
  AblationSpec spec;
  spec.kind = kind;
  spec.world = "medium";
  spec.seeds = kSeeds;
  spec.base = ModelKind::sequential;
  spec.config = experiment();
  return run_ablation(spec);
}

// Accuracy AUC per (arm, seed).
std::map<std::pair<std::string, std::uint64_t>, double> acc_by_arm(const AblationResult& r) {
  std::map<std::pair<std::string, std::uint64_t>, double> out;
  for (const auto& row : r.rows) out[{row.arm, row.seed}] = row.accuracy_auc;
  return out;
}

Outcome compare_arms(const AblationResult& r, const std::string& better, const std::string& worse,
                     std::size_t required) {
  if (!r.errors.empty()) return {false, "ablation error: " + r.errors.front().message};
  const auto acc = acc_by_arm(r);
  std::size_t wins = 0;
  std::ostringstream os;
  for (auto seed : kSeeds) {
    const double a = acc.at({better, seed}), b = acc.at({worse, seed});
    wins += a >= b;
    os << " seed " << seed << ": " << fmt(a, 6) << " vs " << fmt(b, 6) << ";";
  }
  return {wins >= required, better + " >= " + worse + " in " + std::to_string(wins) + "/" +
                                std::to_string(kSeeds.size()) + " seeds (accuracy AUC)" + os.str()};
}

Outcome criterion_ucp() {
  return compare_arms(ablation(AblationKind::ucp_vs_random), "ucp", "random", kSeeds.size());
}

Outcome criterion_updated_policy() {
  return compare_arms(ablation(AblationKind::static_vs_updated), "updated", "static", kSeeds.size());
}

Outcome criterion_policy_transfer() {
  return compare_arms(ablation(AblationKind::policy_transfer), "trained_random", "trained_ucp", 2);
}

// ----------------------------------------------------------------------------
// 9. IntCEM reductions

Outcome criterion_reductions() {
  Rng rng(909);
  const std::size_t d = 6, k = 5, M = 3;
  const auto units = SelectionUnits::concepts(k);
  std::vector<SampleRecord> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_sample(rng, d, k, M));

  CemModel cem({d, k, M, 4, 10, 2, 1.0, {}, false, false});
  cem.init(91);
  double joint = 0.0, intcem = 0.0;
  const IntCemConfig gamma1{1.0, 1.0, 0.0, LengthDistribution::uniform, 0};
  for (const auto& s : batch) {
    joint += cem_joint_loss(cem, s, false);
    intcem += intcem_loss(cem, s, {}, units, gamma1, false).total;
  }
  const double gap_joint = std::abs(joint - intcem) / static_cast<double>(batch.size());

  // Identity realigner: the IntCEM+realigner prediction term equals plain
  // IntCEM's, and the totals agree once the concept terms are switched off.
  RealignerConfig id_cfg;
  id_cfg.arch = RealignerArch::identity;
  Realigner identity(k, id_cfg);
  CemModel cem2({d, k, M, 4, 10, 2, 1.0, {}, false, true});
  cem2.init(92);
  double gap_identity = 0.0;
  for (const IntCemConfig& ic : {IntCemConfig{1.3, 0.0, 0.0, LengthDistribution::uniform, 0},
                                 IntCemConfig{1.3, 0.7, 0.0, LengthDistribution::uniform, 0}}) {
    for (std::size_t T : {0, 1, 3, 5}) {
      for (const auto& s : batch) {
        std::vector<std::size_t> traj;
        for (std::size_t t = 0; t < T; ++t) traj.push_back((2 * t + 1) % k);
        const IntCemLoss a = intcem_loss(cem2, s, traj, units, ic, false);
        const IntCemReaLoss b = intcem_rea_loss(cem2, identity, s, traj, units, ic, false);
        gap_identity = std::max(gap_identity, std::abs(a.pred - b.pred));
        if (ic.lambda_conc == 0.0) gap_identity = std::max(gap_identity, std::abs(a.total - b.total));
      }
    }
  }

  // Masking after end-to-end training.
  WorldSpec spec = preset_spec("small", 4);
  const GenerativeWorld world = build_world(spec);
  const DatasetSplits data = sample_splits(world, 800, 200, 100, 4);
  const auto wunits = SelectionUnits::from_groups(world.num_concepts, world.groups);
  CemConfig cc;
  cc.input_dim = world.input_dim;
  cc.num_concepts = world.num_concepts;
  cc.num_classes = world.num_classes;
  RealignerConfig rc;
  rc.hidden_width = 2 * world.num_concepts;
  TrainConfig tc;
  tc.max_epochs = 4;
  const IntCemReaResult trained =
      train_intcem_rea(data.train, data.val, cc, rc, IntCemConfig{}, wunits, tc, 4);
  std::size_t trajectories = 0, violations = 0;
  for (std::size_t n = 0; n < data.test.size(); ++n) {
    for (const PolicyKind& p : {PolicyKind::ucp(), PolicyKind::random(5)}) {
      const TrajectoryResult r =
          run_trajectory(trained.model, &trained.realigner, p, wunits.size(), data.test[n], wunits, n);
      ++trajectories;
      for (const auto& step : r.steps) {
        for (std::size_t i : step.S) {
          if (std::memcmp(&step.concepts[i], &step.values[i], sizeof(double)) != 0 ||
              step.values[i] != data.test[n].c[i]) {
            ++violations;
          }
        }
      }
    }
  }
  const bool ok = gap_joint <= 1e-10 && gap_identity <= 1e-10 && violations == 0;
  return {ok, "gamma=1,T=0 vs joint CEM gap " + fmt(gap_joint, 3) + "; identity realigner gap " +
                  fmt(gap_identity, 3) + "; " + std::to_string(violations) +
                  " masking violations over " + std::to_string(trajectories) + " trajectories"};
}

// ----------------------------------------------------------------------------
// 10. determinism

std::map<std::string, std::string> entry_point_outputs(const fs::path& dir) {
  fs::create_directories(dir);
  std::map<std::string, std::string> out;
  const GenerativeWorld world = build_world(preset_spec("small", 5));
  out["world"] = world_to_json(world).dump();
  const DatasetSplits data = sample_splits(world, 400, 150, 60, 5);
  write_dataset_csv(dir / "train.csv", data.train, world.input_dim, world.num_concepts);
  out["data"] = read_file(dir / "train.csv");
  const auto units = SelectionUnits::from_groups(world.num_concepts, world.groups);
  TrainConfig tc;
  tc.max_epochs = 3;

  auto saved = [&](const std::string& name, const ConceptModel& m) {
    save_model(dir / (name + ".json"), m);
    out["model " + name] = read_file(dir / (name + ".json.params.json"));
  };
  std::unique_ptr<ConceptModel> seq;
  for (auto scheme : {CbmScheme::sequential, CbmScheme::independent, CbmScheme::joint}) {
    CbmModel m({world.input_dim, world.num_concepts, world.num_classes, 0, 2, scheme, 1.0, {}});
    CbmTrainOptions opt;
    opt.train = tc;
    train_cbm(m, data.train, data.val, opt, 6);
    saved(to_string(scheme), m);
    if (scheme == CbmScheme::sequential) seq = m.clone();
  }
  CemConfig cc;
  cc.input_dim = world.input_dim;
  cc.num_concepts = world.num_concepts;
  cc.num_classes = world.num_classes;
  {
    CemModel m(cc);
    train_cem(m, data.train, data.val, tc, 7);
    saved("cem", m);
  }
  {
    CemConfig ic = cc;
    ic.policy_head = true;
    CemModel m(ic);
    train_intcem(m, data.train, data.val, IntCemConfig{1.1, 1.0, 0.5, LengthDistribution::uniform, 0},
                 units, tc, 8);
    saved("intcem", m);
  }
  seq->freeze();
  RealignerConfig rc;
  rc.train = tc;
  for (auto arch : {RealignerArch::feedforward, RealignerArch::recurrent}) {
    rc.arch = arch;
    const PosthocResult r = train_realigner_posthoc(*seq, data.train, data.val, units, rc, 9);
    save_realigner(dir / "rea.json", r.realigner, r.base_checksum);
    out["realigner " + to_string(arch)] = read_file(dir / "rea.json.params.json");
    const CurvePair c = evaluate_curves(*seq, &r.realigner, PolicyKind::random(3), units.size(),
                                        data.test, units);
    write_curves_csv(dir / "curves.csv", {{"small", "seq", true, 5, "random", c}});
    out["curves " + to_string(arch)] = read_file(dir / "curves.csv");
    out["trajectory " + to_string(arch)] =
        to_jsonl(run_trajectory(*seq, &r.realigner, PolicyKind::random(4), units.size(),
                                data.test[0], units, 0));
  }
  rc.arch = RealignerArch::feedforward;
  {
    const GridResult g = grid_search_realigner(*seq, data.train, data.val, units, rc, {2e-3}, 10);
    std::ostringstream os;
    os.precision(17);
    for (const auto& row : g.rows) os << row.hidden_layers << ',' << row.hidden_width << ',' << row.val_loss << '\n';
    out["grid"] = os.str() + std::to_string(g.best.realigner.checksum());
  }
  {
    const IntCemReaResult r = train_intcem_rea(data.train, data.val, cc, rc, IntCemConfig{}, units, tc, 11);
    out["intcem_rea"] = std::to_string(r.model.checksum()) + "/" + std::to_string(r.realigner.checksum());
  }

  ExperimentConfig ec = default_experiment_config();
  ec.n_train = 300;
  ec.n_val = 100;
  ec.n_test = 50;
  ec.model_train = tc;
  ec.realigner.train = tc;
  ec.cache_dir = dir / "cache";
  SuiteSpec suite;
  suite.worlds = {"small"};
  suite.seeds = {1, 2};
  suite.kinds = {ModelKind::sequential, ModelKind::joint, ModelKind::cem};
  suite.config = ec;
  auto bench_outputs = [&](const std::string& tag) {
    const BenchmarkResult b = run_benchmark(suite);
    write_auc_rows_csv(dir / "rows.csv", b.rows);
    write_table_csv(dir / "table.csv", b.table);
    write_curves_csv(dir / "bcurves.csv", b.curves);
    out["benchmark rows" + tag] = read_file(dir / "rows.csv");
    out["benchmark table" + tag] = read_file(dir / "table.csv");
    out["benchmark curves" + tag] = read_file(dir / "bcurves.csv");
  };
  bench_outputs("");
  // Cached checkpoints and a second worker must reproduce the same tables.
  suite.config.jobs = 2;
  bench_outputs(" (cached, 2 jobs)");
  if (out["benchmark table"] != out["benchmark table (cached, 2 jobs)"] ||
      out["benchmark curves"] != out["benchmark curves (cached, 2 jobs)"]) {
    out["benchmark cache consistency"] = "mismatch";
  }
  AblationSpec ab;
  ab.kind = AblationKind::ucp_vs_random;
  ab.world = "small";
  ab.seeds = {1};
  ab.config = ec;
  write_ablation_csv(dir / "ablation.csv", run_ablation(ab));
  out["ablation"] = read_file(dir / "ablation.csv");
  return out;
}

Outcome criterion_determinism() {
  const auto a = entry_point_outputs(g_scratch / "det-a");
  const auto b = entry_point_outputs(g_scratch / "det-b");
  std::vector<std::string> differing;
  for (const auto& [name, value] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second != value || value.empty()) differing.push_back(name);
  }
  if (a.count("benchmark cache consistency")) differing.push_back("benchmark cache consistency");
  std::string detail = std::to_string(a.size()) + " outputs compared byte for byte";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty() && a.size() == b.size(), detail};
}

// ----------------------------------------------------------------------------
// 11. AUC arithmetic

Outcome criterion_auc() {
  double worst = 0.0;
  auto check = [&](const Vec& curve, double expect) {
    worst = std::max(worst, std::abs(auc(curve) - expect));
  };
  for (double v : {0.0, 0.37, 2.5}) {
    for (std::size_t T : {1, 4, 16}) check(Vec(T + 1, v), v * static_cast<double>(T));
  }
  Vec lin(11);
  for (std::size_t t = 0; t <= 10; ++t) lin[t] = 1.0 - static_cast<double>(t) / 10.0;
  check(lin, 5.0);
  // a + b t over 0..T integrates to a T + b T^2 / 2.
  for (std::size_t T : {3, 8}) {
    Vec c(T + 1);
    for (std::size_t t = 0; t <= T; ++t) c[t] = 0.25 + 1.5 * static_cast<double>(t);
    check(c, 0.25 * T + 1.5 * T * T / 2.0);
  }
  check({1.0, 0.5, 0.25}, 1.125);
  bool threw = false;
  try {
    auc(Vec{1.0});
  } catch (const ValueError&) {
    threw = true;
  }
  return {worst <= 1e-12 && threw,
          "max error " + fmt(worst, 3) + (threw ? "; single point rejected" : "; single point accepted")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool keep = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--keep") {
      keep = true;
    } else if (a == "--cache" && i + 1 < argc) {
      g_cache = argv[++i];
    } else {
      std::cerr << "usage: cirm_acceptance [--only 1,2,...] [--keep] [--cache DIR]\n";
      return 2;
    }
  }
  g_scratch = fs::temp_directory_path() / ("cirm-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(g_scratch);
  if (g_cache.empty()) g_cache = g_scratch / "cache";

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", criterion_gradients},
      {"masking exactness", criterion_masking},
      {"oracle equivalence", criterion_oracle},
      {"intervention-efficacy dominance", criterion_dominance},
      {"full-intervention limits", criterion_full_intervention},
      {"UCP beats random", criterion_ucp},
      {"updated beats static policy", criterion_updated_policy},
      {"policy transfer", criterion_policy_transfer},
      {"IntCEM reductions", criterion_reductions},
      {"determinism", criterion_determinism},
      {"AUC arithmetic", criterion_auc},
  };
  std::size_t failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("[%s] criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id,
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(g_scratch);
  std::printf("%zu criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

#include "cirm/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "cirm/error.hpp"
#include "cirm/nd/checkpoint.hpp"

namespace cirm {

using nlohmann::json;

std::string to_string(Metric m) { return m == Metric::concept_bce ? "concept_bce" : "accuracy"; }

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double stderr_of(const Vec& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1)) /
         std::sqrt(static_cast<double>(xs.size()));
}

double mean_of(const Vec& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  return xs.empty() ? 0.0 : m / static_cast<double>(xs.size());
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t salt) {
  return fnv1a(std::to_string(seed) + ":" + std::to_string(salt));
}

std::vector<TableRow> aggregate(
    const std::vector<std::tuple<std::string, std::string, bool, double, double>>& rows) {
  std::vector<TableRow> out;
  std::map<std::tuple<std::string, std::string, bool>, std::pair<Vec, Vec>> groups;
  std::vector<std::tuple<std::string, std::string, bool>> order;
  for (const auto& [world, label, realigned, c, a] : rows) {
    auto key = std::make_tuple(world, label, realigned);
    if (!groups.count(key)) order.push_back(key);
    groups[key].first.push_back(c);
    groups[key].second.push_back(a);
  }
  for (const auto& key : order) {
    const auto& [c, a] = groups[key];
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), c.size(), mean_of(c),
                   stderr_of(c), mean_of(a), stderr_of(a)});
  }
  return out;
}

}  // namespace

CurvePair evaluate_curves(const ConceptModel& model, const Realigner* realigner,
                          const PolicyKind& policy, std::size_t T, const Dataset& test,
                          const SelectionUnits& units) {
  if (test.empty()) throw ValueError("evaluate_curves: empty test set");
  if (T > units.size()) throw ValueError("T exceeds the number of selection units");
  std::vector<Vec> loss(T + 1), acc(T + 1);
  for (std::size_t n = 0; n < test.size(); ++n) {
    const TrajectoryResult r = run_trajectory(model, realigner, policy, T, test[n], units, n);
    for (std::size_t t = 0; t <= T; ++t) {
      loss[t].push_back(*r.steps[t].concept_loss);
      acc[t].push_back(*r.steps[t].correct ? 1.0 : 0.0);
    }
  }
  const std::string fp = hex(fnv1a(json{{"model", std::to_string(model.checksum())},
                                        {"realigner", realigner ? std::to_string(realigner->checksum())
                                                                : std::string("none")},
                                        {"policy", to_json(policy)},
                                        {"T", T},
                                        {"n", test.size()}}
                                       .dump()));
  CurvePair out;
  out.concept_loss.metric = Metric::concept_bce;
  out.accuracy.metric = Metric::accuracy;
  for (Curve* c : {&out.concept_loss, &out.accuracy}) {
    c->n_samples = test.size();
    c->fingerprint = fp;
  }
  for (std::size_t t = 0; t <= T; ++t) {
    out.concept_loss.t.push_back(t);
    out.concept_loss.value.push_back(mean_of(loss[t]));
    out.concept_loss.stderr_.push_back(stderr_of(loss[t]));
    out.accuracy.t.push_back(t);
    out.accuracy.value.push_back(mean_of(acc[t]));
    out.accuracy.stderr_.push_back(stderr_of(acc[t]));
  }
  return out;
}

double auc(const Vec& values) {
  if (values.size() < 2) throw ValueError("auc needs at least 2 points");
  double area = 0.0;
  for (std::size_t t = 1; t < values.size(); ++t) area += 0.5 * (values[t - 1] + values[t]);
  return area;
}

double auc(const Curve& curve) {
  for (std::size_t i = 1; i < curve.t.size(); ++i) {
    if (curve.t[i] != curve.t[i - 1] + 1) throw ValueError("curve steps must be consecutive");
  }
  return auc(curve.value);
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.realigner.train.lr = 2e-3;
  return c;
}

json to_json(const ExperimentConfig& c) {
  return {{"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"model_train", to_json(c.model_train)},
          {"realigner", to_json(c.realigner)},
          {"realigner_width_factor", c.realigner_width_factor},
          {"intcem", to_json(c.intcem)},
          {"eval_policy", to_json(c.eval_policy)}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c = default_experiment_config();
  c.n_train = j.value("n_train", c.n_train);
  c.n_val = j.value("n_val", c.n_val);
  c.n_test = j.value("n_test", c.n_test);
  if (j.contains("model_train")) c.model_train = train_config_from_json(j["model_train"]);
  if (j.contains("realigner")) c.realigner = realigner_config_from_json(j["realigner"]);
  c.realigner_width_factor = j.value("realigner_width_factor", c.realigner_width_factor);
  if (j.contains("intcem")) c.intcem = intcem_config_from_json(j["intcem"]);
  if (j.contains("eval_policy")) c.eval_policy = policy_from_json(j["eval_policy"]);
  return c;
}

RealignerConfig resolved_realigner_config(const ExperimentConfig& config, std::size_t k) {
  RealignerConfig r = config.realigner;
  if (r.hidden_width == 0) {
    r.hidden_width = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(config.realigner_width_factor * static_cast<double>(k))));
  }
  return r;
}

// ----------------------------------------------------------------------------
// Workbench

Workbench make_workbench(const std::string& world_name, const GenerativeWorld& world,
                         std::uint64_t seed, const ExperimentConfig& config) {
  Workbench wb;
  wb.world_name = world_name;
  wb.world = world;
  wb.seed = seed;
  wb.config = config;
  wb.data = sample_splits(world, config.n_train, config.n_val, config.n_test, seed);
  wb.units = SelectionUnits::from_groups(world.num_concepts, world.groups);
  return wb;
}

void Workbench::log(const std::string& line) const {
  if (config.log) config.log(line);
}

std::string Workbench::fingerprint(const json& what) const {
  const json key{{"world", world_to_json(world)},
                 {"seed", seed},
                 {"n", {config.n_train, config.n_val}},
                 {"model_train", to_json(config.model_train)},
                 {"what", what}};
  return hex(fnv1a(key.dump()));
}

namespace {

// Encoder training is shared, so both CBMs key on the pair.
json model_key(ModelKind kind, const ExperimentConfig& config) {
  json key{{"model", kind == ModelKind::independent ? "sequential" : to_string(kind)}};
  if (kind == ModelKind::intcem) key["intcem"] = to_json(config.intcem);
  return key;
}

}  // namespace

void Workbench::train_cbm_pair() {
  const std::string fp = fingerprint(model_key(ModelKind::sequential, config));
  const auto seq_path = config.cache_dir / ("model-" + fp + "-sequential.json");
  const auto ind_path = config.cache_dir / ("model-" + fp + "-independent.json");
  if (!config.cache_dir.empty() && std::filesystem::exists(seq_path) &&
      std::filesystem::exists(ind_path)) {
    models_[ModelKind::sequential] = load_model(seq_path);
    models_[ModelKind::independent] = load_model(ind_path);
  } else {
    log("training sequential/independent CBM (" + world_name + ", seed " + std::to_string(seed) + ")");
    const std::uint64_t s = derived_seed(seed, 101);
    CbmConfig cfg{world.input_dim, world.num_concepts, world.num_classes, 0, 2,
                  CbmScheme::sequential, 1.0, {}};
    auto seq = std::make_shared<CbmModel>(cfg);
    seq->init(s);
    train_cbm_encoder(*seq, data.train, data.val, config.model_train, s);
    auto ind = std::make_shared<CbmModel>(*seq);
    ind->set_scheme(CbmScheme::independent);
    CbmTrainOptions opt;
    opt.train = config.model_train;
    train_cbm_head(*seq, data.train, data.val, false, opt, s);
    train_cbm_head(*ind, data.train, data.val, true, opt, s);
    if (!config.cache_dir.empty()) {
      save_model(seq_path, *seq);
      save_model(ind_path, *ind);
    }
    models_[ModelKind::sequential] = seq;
    models_[ModelKind::independent] = ind;
  }
  models_[ModelKind::sequential]->freeze();
  models_[ModelKind::independent]->freeze();
}

const ConceptModel& Workbench::model(ModelKind kind) {
  if (auto it = models_.find(kind); it != models_.end()) return *it->second;
  if (kind == ModelKind::sequential || kind == ModelKind::independent) {
    train_cbm_pair();
    return *models_.at(kind);
  }
  const std::string fp = fingerprint(model_key(kind, config));
  const auto path = config.cache_dir / ("model-" + fp + "-" + to_string(kind) + ".json");
  std::shared_ptr<ConceptModel> m;
  if (!config.cache_dir.empty() && std::filesystem::exists(path)) {
    m = load_model(path);
  } else {
    log("training " + to_string(kind) + " (" + world_name + ", seed " + std::to_string(seed) + ")");
    const std::uint64_t s = derived_seed(seed, 100 + static_cast<int>(kind));
    if (kind == ModelKind::joint) {
      auto cbm = std::make_shared<CbmModel>(CbmConfig{world.input_dim, world.num_concepts,
                                                      world.num_classes, 0, 2, CbmScheme::joint,
                                                      1.0, {}});
      CbmTrainOptions opt;
      opt.train = config.model_train;
      train_cbm(*cbm, data.train, data.val, opt, s);
      m = cbm;
    } else {
      CemConfig cfg;
      cfg.input_dim = world.input_dim;
      cfg.num_concepts = world.num_concepts;
      cfg.num_classes = world.num_classes;
      cfg.policy_head = kind == ModelKind::intcem && config.intcem.lambda_roll > 0.0;
      auto cem = std::make_shared<CemModel>(cfg);
      if (kind == ModelKind::cem) {
        train_cem(*cem, data.train, data.val, config.model_train, s);
      } else {
        train_intcem(*cem, data.train, data.val, config.intcem, units, config.model_train, s);
      }
      m = cem;
    }
    if (!config.cache_dir.empty()) save_model(path, *m);
  }
  m->freeze();
  models_[kind] = m;
  return *m;
}

const Realigner& Workbench::realigner(ModelKind kind, const std::optional<RealignerConfig>& cfg_in) {
  const RealignerConfig cfg = cfg_in ? *cfg_in : resolved_realigner_config(config, world.num_concepts);
  const json key{{"realigner", to_json(cfg)}, {"base", model_key(kind, config)}};
  const std::string fp = fingerprint(key);
  if (auto it = realigners_.find(fp); it != realigners_.end()) return *it->second;
  const ConceptModel& base = model(kind);
  const auto path = config.cache_dir / ("realigner-" + fp + ".json");
  std::shared_ptr<Realigner> r;
  if (!config.cache_dir.empty() && std::filesystem::exists(path)) {
    LoadedRealigner loaded = load_realigner(path);
    if (loaded.base_checksum != base.checksum()) {
      throw StateError("cached realigner " + path.string() + " was trained on another base model");
    }
    r = std::make_shared<Realigner>(std::move(loaded.realigner));
  } else {
    log("training realigner for " + to_string(kind) + " (" + world_name + ", seed " +
        std::to_string(seed) + ", " + to_string(cfg.arch) + "/" + to_string(cfg.input_mode) +
        ", policy " + to_string(cfg.training_policy.type) + ")");
    PosthocResult res = train_realigner_posthoc(base, data.train, data.val, units, cfg,
                                                derived_seed(seed, 200));
    r = std::make_shared<Realigner>(std::move(res.realigner));
    if (!config.cache_dir.empty()) save_realigner(path, *r, base.checksum());
  }
  realigners_[fp] = r;
  return *r;
}

WorldEntry resolve_world(const std::string& name_or_path, std::uint64_t seed) {
  for (const auto& p : preset_names()) {
    if (p == name_or_path) return {p, build_world(preset_spec(p, seed))};
  }
  if (!std::filesystem::exists(name_or_path)) {
    throw ValueError("unknown world '" + name_or_path + "' (not a preset or an existing file)");
  }
  return {std::filesystem::path(name_or_path).stem().string(), load_world(name_or_path)};
}

// ----------------------------------------------------------------------------
// Benchmark

namespace {

struct JobOutput {
  std::vector<AucSummary> rows;
  std::vector<CurveRecord> curves;
  std::vector<CellError> errors;
};

std::string policy_label(const PolicyKind& p) {
  return p.type == PolicyType::random ? "random" : to_string(p.type) + "/" + to_string(p.source);
}

}  // namespace

BenchmarkResult run_benchmark(const SuiteSpec& spec) {
  if (spec.worlds.empty() || spec.kinds.empty() || spec.seeds.empty()) {
    throw ValueError("benchmark suite needs worlds, model kinds and seeds");
  }
  std::vector<std::pair<std::string, std::uint64_t>> jobs;
  for (const auto& w : spec.worlds) {
    for (auto s : spec.seeds) jobs.emplace_back(w, s);
  }
  std::vector<JobOutput> slots(jobs.size());
  parallel_for(jobs.size(), spec.config.jobs, [&](std::size_t j) {
    const auto& [world_name, seed] = jobs[j];
    JobOutput& out = slots[j];
    std::optional<Workbench> wb;
    try {
      const WorldEntry entry = resolve_world(world_name, seed);
      wb = make_workbench(entry.name, entry.world, seed, spec.config);
    } catch (const std::exception& e) {
      for (auto kind : spec.kinds) out.errors.push_back({world_name, to_string(kind), seed, e.what()});
      return;
    }
    const PolicyKind& policy = spec.config.eval_policy;
    const std::size_t T = wb->units.size();
    for (auto kind : spec.kinds) {
      try {
        const ConceptModel& m = wb->model(kind);
        const CurvePair base = evaluate_curves(m, nullptr, policy, T, wb->data.test, wb->units);
        const Realigner& r = wb->realigner(kind);
        const CurvePair rea = evaluate_curves(m, &r, policy, T, wb->data.test, wb->units);
        out.rows.push_back({wb->world_name, kind, false, seed, auc(base.concept_loss), auc(base.accuracy)});
        out.rows.push_back({wb->world_name, kind, true, seed, auc(rea.concept_loss), auc(rea.accuracy)});
        out.curves.push_back({wb->world_name, to_string(kind), false, seed, policy_label(policy), base});
        out.curves.push_back({wb->world_name, to_string(kind), true, seed, policy_label(policy), rea});
      } catch (const std::exception& e) {
        out.errors.push_back({wb->world_name, to_string(kind), seed, e.what()});
      }
    }
  });
  BenchmarkResult result;
  for (auto& s : slots) {
    result.rows.insert(result.rows.end(), s.rows.begin(), s.rows.end());
    result.curves.insert(result.curves.end(), s.curves.begin(), s.curves.end());
    result.errors.insert(result.errors.end(), s.errors.begin(), s.errors.end());
  }
  // Table order: world, then kind, then baseline before realigned.
  std::vector<AucSummary> ordered;
  for (const auto& w : spec.worlds) {
    for (auto kind : spec.kinds) {
      for (bool rea : {false, true}) {
        for (std::size_t j = 0; j < jobs.size(); ++j) {
          if (jobs[j].first != w) continue;
          for (const auto& r : slots[j].rows) {
            if (r.kind == kind && r.realigned == rea) ordered.push_back(r);
          }
        }
      }
    }
  }
  std::vector<std::tuple<std::string, std::string, bool, double, double>> flat;
  for (const auto& r : ordered) {
    flat.emplace_back(r.world, to_string(r.kind), r.realigned, r.concept_loss_auc, r.accuracy_auc);
  }
  result.table = aggregate(flat);
  return result;
}

// ----------------------------------------------------------------------------
// Ablations

std::string to_string(AblationKind k) {
  switch (k) {
    case AblationKind::architectures: return "architectures";
    case AblationKind::policy_transfer: return "policy_transfer";
    case AblationKind::static_vs_updated: return "static_vs_updated";
    case AblationKind::ucp_vs_random: return "ucp_vs_random";
  }
  return "?";
}

AblationKind ablation_kind_from_string(const std::string& s) {
  if (s == "architectures") return AblationKind::architectures;
  if (s == "policy_transfer") return AblationKind::policy_transfer;
  if (s == "static_vs_updated") return AblationKind::static_vs_updated;
  if (s == "ucp_vs_random") return AblationKind::ucp_vs_random;
  throw ValueError("unknown ablation '" + s + "'");
}

namespace {

struct Arm {
  std::string name;
  std::optional<RealignerConfig> realigner;  // unset = no realigner
  PolicyKind policy;
};

std::vector<Arm> ablation_arms(AblationKind kind, const RealignerConfig& base,
                               const PolicyKind& eval, std::uint64_t seed) {
  const PolicyKind random_eval = PolicyKind::random(derived_seed(seed, 300));
  std::vector<Arm> arms;
  switch (kind) {
    case AblationKind::architectures:
      for (auto arch : {RealignerArch::feedforward, RealignerArch::recurrent}) {
        for (auto mode : {RealignerInput::original, RealignerInput::previous_output}) {
          RealignerConfig c = base;
          c.arch = arch;
          c.input_mode = mode;
          arms.push_back({to_string(arch) + "/" + to_string(mode), c, eval});
        }
      }
      break;
    case AblationKind::policy_transfer: {
      RealignerConfig ucp = base;
      ucp.training_policy = PolicyKind::ucp(PolicySource::updated);
      RealignerConfig rnd = base;
      rnd.training_policy = PolicyKind::random(derived_seed(seed, 301));
      arms.push_back({"trained_ucp", ucp, random_eval});
      arms.push_back({"trained_random", rnd, random_eval});
      break;
    }
    case AblationKind::static_vs_updated:
      arms.push_back({"static", base, PolicyKind::ucp(PolicySource::original)});
      arms.push_back({"updated", base, PolicyKind::ucp(PolicySource::updated)});
      break;
    case AblationKind::ucp_vs_random:
      arms.push_back({"ucp", std::nullopt, PolicyKind::ucp(PolicySource::updated)});
      arms.push_back({"random", std::nullopt, random_eval});
      break;
  }
  return arms;
}

struct AblationJob {
  std::vector<AblationArmResult> rows;
  std::vector<CurveRecord> curves;
  std::vector<CellError> errors;
};

}  // namespace

AblationResult run_ablation(const AblationSpec& spec) {
  if (spec.seeds.empty()) throw ValueError("ablation needs at least one seed");
  std::vector<AblationJob> slots(spec.seeds.size());
  parallel_for(spec.seeds.size(), spec.config.jobs, [&](std::size_t j) {
    const std::uint64_t seed = spec.seeds[j];
    AblationJob& out = slots[j];
    try {
      const WorldEntry entry = resolve_world(spec.world, seed);
      Workbench wb = make_workbench(entry.name, entry.world, seed, spec.config);
      const ConceptModel& m = wb.model(spec.base);
      const RealignerConfig base = resolved_realigner_config(spec.config, wb.world.num_concepts);
      for (const Arm& arm : ablation_arms(spec.kind, base, spec.config.eval_policy, seed)) {
        try {
          const Realigner* r = arm.realigner ? &wb.realigner(spec.base, arm.realigner) : nullptr;
          const CurvePair c = evaluate_curves(m, r, arm.policy, wb.units.size(), wb.data.test, wb.units);
          out.rows.push_back({arm.name, seed, auc(c.concept_loss), auc(c.accuracy)});
          out.curves.push_back({wb.world_name, arm.name, r != nullptr, seed, policy_label(arm.policy), c});
        } catch (const std::exception& e) {
          out.errors.push_back({entry.name, arm.name, seed, e.what()});
        }
      }
    } catch (const std::exception& e) {
      out.errors.push_back({spec.world, to_string(spec.kind), seed, e.what()});
    }
  });
  AblationResult result;
  result.kind = spec.kind;
  std::vector<std::tuple<std::string, std::string, bool, double, double>> flat;
  for (auto& s : slots) {
    result.rows.insert(result.rows.end(), s.rows.begin(), s.rows.end());
    result.curves.insert(result.curves.end(), s.curves.begin(), s.curves.end());
    result.errors.insert(result.errors.end(), s.errors.begin(), s.errors.end());
  }
  // Group per arm in arm order.
  std::vector<std::string> arm_order;
  for (const auto& r : result.rows) {
    if (std::find(arm_order.begin(), arm_order.end(), r.arm) == arm_order.end()) {
      arm_order.push_back(r.arm);
    }
  }
  for (const auto& arm : arm_order) {
    for (const auto& r : result.rows) {
      if (r.arm == arm) flat.emplace_back(spec.world, arm, false, r.concept_loss_auc, r.accuracy_auc);
    }
  }
  result.table = aggregate(flat);
  return result;
}

// ----------------------------------------------------------------------------
// CSV

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveRecord>& curves) {
  auto out = open_csv(path);
  out << "world,label,realigned,seed,policy,metric,t,value,stderr,n_samples\n";
  for (const auto& rec : curves) {
    for (const Curve* c : {&rec.curves.concept_loss, &rec.curves.accuracy}) {
      for (std::size_t i = 0; i < c->t.size(); ++i) {
        out << rec.world << ',' << rec.label << ',' << (rec.realigned ? 1 : 0) << ',' << rec.seed
            << ',' << rec.policy << ',' << to_string(c->metric) << ',' << c->t[i] << ','
            << c->value[i] << ',' << c->stderr_[i] << ',' << c->n_samples << '\n';
      }
    }
  }
}

void write_auc_rows_csv(const std::filesystem::path& path, const std::vector<AucSummary>& rows) {
  auto out = open_csv(path);
  out << "world,model,realigned,seed,concept_loss_auc,accuracy_auc\n";
  for (const auto& r : rows) {
    out << r.world << ',' << to_string(r.kind) << ',' << (r.realigned ? 1 : 0) << ',' << r.seed
        << ',' << r.concept_loss_auc << ',' << r.accuracy_auc << '\n';
  }
}

void write_table_csv(const std::filesystem::path& path, const std::vector<TableRow>& table) {
  auto out = open_csv(path);
  out << "world,model,realigned,n_seeds,concept_loss_auc_mean,concept_loss_auc_stderr,"
         "accuracy_auc_mean,accuracy_auc_stderr\n";
  for (const auto& r : table) {
    out << r.world << ',' << r.label << ',' << (r.realigned ? 1 : 0) << ',' << r.n_seeds << ','
        << r.concept_loss_auc_mean << ',' << r.concept_loss_auc_stderr << ','
        << r.accuracy_auc_mean << ',' << r.accuracy_auc_stderr << '\n';
  }
}

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result) {
  auto out = open_csv(path);
  out << "ablation,arm,seed,concept_loss_auc,accuracy_auc\n";
  for (const auto& r : result.rows) {
    out << to_string(result.kind) << ',' << r.arm << ',' << r.seed << ',' << r.concept_loss_auc
        << ',' << r.accuracy_auc << '\n';
  }
}

}  // namespace cirm

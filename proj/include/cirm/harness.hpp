#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/intervene.hpp"
#include "cirm/models.hpp"
#include "cirm/realign_train.hpp"
#include "cirm/realigner.hpp"
#include "cirm/world.hpp"

namespace cirm {

enum class Metric { concept_bce, accuracy };
std::string to_string(Metric m);

struct Curve {
  Metric metric = Metric::concept_bce;
  std::vector<std::size_t> t;
  Vec value;
  Vec stderr_;  // standard error of the per-sample mean
  std::size_t n_samples = 0;
  std::string fingerprint;
};

struct CurvePair {
  Curve concept_loss;
  Curve accuracy;
};

/// Per-step means of run_trajectory over `test`. The concept metric is
/// measured on the vector fed to the classifier. Random policies draw a
/// separate stream per sample index.
CurvePair evaluate_curves(const ConceptModel& model, const Realigner* realigner,
                          const PolicyKind& policy, std::size_t T, const Dataset& test,
                          const SelectionUnits& units);

/// Trapezoid over integer steps, t = 0..T. Throws ValueError below 2 points.
double auc(const Curve& curve);
double auc(const Vec& values);

/// Knobs shared by the benchmark and the ablations.
struct ExperimentConfig {
  std::size_t n_train = 6000;
  std::size_t n_val = 1000;
  std::size_t n_test = 1000;
  TrainConfig model_train;
  /// hidden_width 0 resolves to round(width_factor * k).
  RealignerConfig realigner;
  double realigner_width_factor = 2.0;
  IntCemConfig intcem;
  PolicyKind eval_policy = PolicyKind::ucp(PolicySource::updated);
  /// Checkpoints keyed by config fingerprint; empty disables caching.
  std::filesystem::path cache_dir;
  std::size_t jobs = 1;
  /// Progress lines; may be empty.
  std::function<void(const std::string&)> log;
};

ExperimentConfig default_experiment_config();
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// Realigner config with the width factor resolved for k concepts.
RealignerConfig resolved_realigner_config(const ExperimentConfig& config, std::size_t k);

/// Data, units and trained models for one (world, seed).
struct Workbench {
  std::string world_name;
  GenerativeWorld world;
  std::uint64_t seed = 0;
  DatasetSplits data;
  SelectionUnits units;
  ExperimentConfig config;

  /// Trains (or loads from the cache) a frozen base model. Sequential and
  /// independent CBMs share one concept encoder.
  const ConceptModel& model(ModelKind kind);
  /// Posthoc realigner for `kind` under `config` (defaults to the
  /// experiment's realigner config), cached like the models.
  const Realigner& realigner(ModelKind kind, const std::optional<RealignerConfig>& config = {});

 private:
  std::map<ModelKind, std::shared_ptr<ConceptModel>> models_;
  std::map<std::string, std::shared_ptr<Realigner>> realigners_;
  std::string fingerprint(const nlohmann::json& what) const;
  void log(const std::string& line) const;
  void train_cbm_pair();
};

Workbench make_workbench(const std::string& world_name, const GenerativeWorld& world,
                         std::uint64_t seed, const ExperimentConfig& config);

struct WorldEntry {
  std::string name;
  GenerativeWorld world;
};

/// Preset name or path to a world file; presets are drawn from `seed`.
WorldEntry resolve_world(const std::string& name_or_path, std::uint64_t seed);

struct SuiteSpec {
  std::vector<std::string> worlds{"medium"};
  std::vector<ModelKind> kinds{ModelKind::sequential, ModelKind::independent, ModelKind::joint,
                               ModelKind::cem};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  ExperimentConfig config = default_experiment_config();
};

struct AucSummary {
  std::string world;
  ModelKind kind = ModelKind::sequential;
  bool realigned = false;
  std::uint64_t seed = 0;
  double concept_loss_auc = 0.0;
  double accuracy_auc = 0.0;
};

struct CurveRecord {
  std::string world;
  std::string label;  // model kind or ablation arm
  bool realigned = false;
  std::uint64_t seed = 0;
  std::string policy;
  CurvePair curves;
};

struct TableRow {
  std::string world;
  std::string label;
  bool realigned = false;
  std::size_t n_seeds = 0;
  double concept_loss_auc_mean = 0.0;
  double concept_loss_auc_stderr = 0.0;
  double accuracy_auc_mean = 0.0;
  double accuracy_auc_stderr = 0.0;
};

struct CellError {
  std::string world;
  std::string label;
  std::uint64_t seed = 0;
  std::string message;
};

struct BenchmarkResult {
  std::vector<AucSummary> rows;   // per seed
  std::vector<TableRow> table;    // mean and stderr across seeds
  std::vector<CurveRecord> curves;
  std::vector<CellError> errors;
};

/// Trains or loads every cell, evaluates baseline and realigned curves and
/// aggregates AUCs. A failing cell is reported in `errors` and the rest of
/// the suite still runs.
BenchmarkResult run_benchmark(const SuiteSpec& spec);

enum class AblationKind { architectures, policy_transfer, static_vs_updated, ucp_vs_random };
std::string to_string(AblationKind k);
AblationKind ablation_kind_from_string(const std::string& s);

struct AblationSpec {
  AblationKind kind = AblationKind::ucp_vs_random;
  std::string world = "medium";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Base model the arms are evaluated on.
  ModelKind base = ModelKind::sequential;
  ExperimentConfig config = default_experiment_config();
};

struct AblationArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  double concept_loss_auc = 0.0;
  double accuracy_auc = 0.0;
};

struct AblationResult {
  AblationKind kind = AblationKind::ucp_vs_random;
  std::vector<AblationArmResult> rows;
  std::vector<TableRow> table;
  std::vector<CurveRecord> curves;
  std::vector<CellError> errors;
};

/// architectures: {feedforward, recurrent} x {original, previous_output}.
/// policy_transfer: realigners trained under UCP and random, both evaluated
/// under random. static_vs_updated: policy reads c_hat or kappa_t, the
/// classifier always reads kappa_t. ucp_vs_random: no realigner.
AblationResult run_ablation(const AblationSpec& spec);

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveRecord>& curves);
void write_auc_rows_csv(const std::filesystem::path& path, const std::vector<AucSummary>& rows);
void write_table_csv(const std::filesystem::path& path, const std::vector<TableRow>& table);
void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result);

}  // namespace cirm

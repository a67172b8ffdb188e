#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/models.hpp"
#include "cirm/policy.hpp"
#include "cirm/realigner.hpp"
#include "cirm/world.hpp"

namespace cirm {

struct InterventionRecord {
  std::size_t step = 0;
  std::size_t concept_index = 0;
  double old_value = 0.0;
  double new_value = 0.0;
};

/// Bookkeeping for one trajectory: c~_t, the intervened set S_t and the
/// optional realigned vector kappa_t.
struct InterventionState {
  std::size_t t = 0;
  std::vector<char> mask;       // concept-level S_t
  std::vector<char> unit_done;  // selection-unit level
  Vec values;                   // c~_t
  std::optional<Vec> realigned; // kappa_t
  std::vector<InterventionRecord> history;

  std::set<std::size_t> intervened() const;
};

InterventionState initial_state(std::span<const double> c_hat, std::size_t num_units);

/// Writes ground truth for every member of `unit` and advances t. Throws
/// StateError on re-intervention and ValueError on values outside {0, 1}.
void apply_intervention(InterventionState& state, const SelectionUnits& units,
                        std::size_t unit, std::span<const double> member_values);
/// Concept-level form on an ungrouped state.
InterventionState apply_intervention(const InterventionState& state, std::size_t i,
                                     double gt);

struct StepRecord {
  std::size_t t = 0;
  std::optional<std::size_t> unit;  // empty at step 0
  std::vector<std::size_t> S;
  Vec values;     // c~_t
  Vec concepts;   // vector fed to the classifier (kappa_t or c~_t)
  Vec logits;
  Vec class_probs;
  std::optional<double> concept_loss;
  std::optional<bool> correct;
};

struct TrajectoryResult {
  std::vector<StepRecord> steps;  // t = 0..T
};

nlohmann::json to_json(const StepRecord& r);
StepRecord step_record_from_json(const nlohmann::json& j);
/// One JSON object per line, one line per step.
std::string to_jsonl(const TrajectoryResult& result);

/// Drives one trajectory step by step. Step 0 feeds the unintervened c_hat
/// to the classifier; every later step applies ground truth, realigns when
/// a realigner is present and records the classifier output.
class TrajectoryRunner {
 public:
  TrajectoryRunner(const ConceptModel& model, const Realigner* realigner,
                   std::span<const double> x, SelectionUnits units,
                   std::optional<Vec> truth = std::nullopt,
                   std::optional<std::size_t> label = std::nullopt);

  const InterventionState& state() const { return state_; }
  const SelectionUnits& units() const { return units_; }
  const ConceptPrediction& prediction() const { return pred_; }
  const Vec& c_hat() const { return pred_.probs; }
  /// kappa_t with a realigner, c~_t otherwise.
  const Vec& current() const { return current_; }
  bool complete() const { return state_.t == units_.size(); }

  /// Concept vector a policy with this source reads.
  const Vec& policy_input(PolicySource source) const;
  /// Next unit under `policy`; random policies draw from `rng`.
  std::size_t suggest(const PolicyKind& policy, Rng* rng = nullptr) const;

  /// Applies ground truth (from the stored truth when `member_values` is
  /// empty) for `unit` and records the resulting step.
  const StepRecord& intervene(std::size_t unit, std::span<const double> member_values = {});

  const std::vector<StepRecord>& records() const { return records_; }
  TrajectoryResult result() const { return {records_}; }

 private:
  void record(std::optional<std::size_t> unit);

  const ConceptModel* model_;
  const Realigner* realigner_;
  SelectionUnits units_;
  std::optional<Vec> truth_;
  std::optional<std::size_t> label_;
  ConceptPrediction pred_;
  InterventionState state_;
  Realigner::Carry carry_;
  Vec current_;
  std::vector<StepRecord> records_;
};

/// Runs T interventions on `sample` under `policy`. Random policies use an
/// rng seeded from (policy.seed, stream). Throws ValueError when T exceeds
/// the unit count.
TrajectoryResult run_trajectory(const ConceptModel& model, const Realigner* realigner,
                                const PolicyKind& policy, std::size_t T,
                                const SampleRecord& sample, const SelectionUnits& units,
                                std::uint64_t stream = 0);

}  // namespace cirm

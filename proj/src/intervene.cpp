#include "cirm/intervene.hpp"

#include <sstream>

#include "cirm/error.hpp"
#include "cirm/nd/layers.hpp"
#include "cirm/nd/losses.hpp"

namespace cirm {

using nlohmann::json;

std::set<std::size_t> InterventionState::intervened() const {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.insert(i);
  }
  return out;
}

InterventionState initial_state(std::span<const double> c_hat, std::size_t num_units) {
  InterventionState s;
  s.values.assign(c_hat.begin(), c_hat.end());
  s.mask.assign(c_hat.size(), 0);
  s.unit_done.assign(num_units, 0);
  return s;
}

void apply_intervention(InterventionState& state, const SelectionUnits& units,
                        std::size_t unit, std::span<const double> member_values) {
  if (unit >= units.size()) {
    throw ValueError("unit " + std::to_string(unit) + " out of range (" +
                     std::to_string(units.size()) + " units)");
  }
  if (state.unit_done.size() != units.size()) {
    throw ShapeError("state tracks " + std::to_string(state.unit_done.size()) +
                     " units, selection has " + std::to_string(units.size()));
  }
  const auto& members = units.members[unit];
  if (member_values.size() != members.size()) {
    throw ShapeError("unit " + std::to_string(unit) + " has " +
                     std::to_string(members.size()) + " members, got " +
                     std::to_string(member_values.size()) + " values");
  }
  if (state.unit_done[unit]) {
    throw StateError("'" + units.names[unit] + "' was already intervened on");
  }
  for (double v : member_values) {
    if (v != 0.0 && v != 1.0) throw ValueError("intervention values must be 0 or 1");
  }
  for (std::size_t j = 0; j < members.size(); ++j) {
    const std::size_t i = members[j];
    state.history.push_back({state.t, i, state.values[i], member_values[j]});
    state.values[i] = member_values[j];
    state.mask[i] = 1;
  }
  state.unit_done[unit] = 1;
  ++state.t;
}

InterventionState apply_intervention(const InterventionState& state, std::size_t i,
                                     double gt) {
  const std::size_t k = state.values.size();
  if (state.unit_done.size() != k) {
    throw StateError("concept-level intervention on a grouped state");
  }
  InterventionState next = state;
  const double v[1] = {gt};
  apply_intervention(next, SelectionUnits::concepts(k), i, v);
  return next;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const StepRecord& r) {
  return {{"t", r.t},
          {"unit", r.unit ? json(*r.unit) : json(nullptr)},
          {"S", r.S},
          {"values", r.values},
          {"concepts", r.concepts},
          {"logits", r.logits},
          {"class_probs", r.class_probs},
          {"concept_loss", opt_json(r.concept_loss)},
          {"correct", r.correct ? json(*r.correct) : json(nullptr)}};
}

StepRecord step_record_from_json(const json& j) {
  StepRecord r;
  r.t = j.at("t");
  if (!j.at("unit").is_null()) r.unit = j["unit"].get<std::size_t>();
  r.S = j.at("S").get<std::vector<std::size_t>>();
  r.values = j.at("values").get<Vec>();
  r.concepts = j.at("concepts").get<Vec>();
  r.logits = j.at("logits").get<Vec>();
  r.class_probs = j.at("class_probs").get<Vec>();
  if (!j.at("concept_loss").is_null()) r.concept_loss = j["concept_loss"].get<double>();
  if (!j.at("correct").is_null()) r.correct = j["correct"].get<bool>();
  return r;
}

std::string to_jsonl(const TrajectoryResult& result) {
  std::ostringstream out;
  for (const auto& r : result.steps) out << to_json(r).dump() << '\n';
  return out.str();
}

TrajectoryRunner::TrajectoryRunner(const ConceptModel& model, const Realigner* realigner,
                                   std::span<const double> x, SelectionUnits units,
                                   std::optional<Vec> truth, std::optional<std::size_t> label)
    : model_(&model),
      realigner_(realigner),
      units_(std::move(units)),
      truth_(std::move(truth)),
      label_(label) {
  const std::size_t k = model.num_concepts();
  if (units_.num_concepts != k) {
    throw ShapeError("selection units cover " + std::to_string(units_.num_concepts) +
                     " concepts, model has k=" + std::to_string(k));
  }
  if (realigner_ && realigner_->num_concepts() != k) {
    throw ShapeError("realigner has k=" + std::to_string(realigner_->num_concepts()) +
                     ", model has k=" + std::to_string(k));
  }
  if (truth_ && truth_->size() != k) {
    throw ShapeError("ground truth has dim " + std::to_string(truth_->size()) +
                     ", expected k=" + std::to_string(k));
  }
  if (label_ && *label_ >= model.num_classes()) throw ValueError("label out of range");
  pred_ = model.predict_concepts(x);
  state_ = initial_state(pred_.probs, units_.size());
  if (realigner_) {
    carry_ = realigner_->begin(pred_.probs);
    state_.realigned = pred_.probs;
  }
  current_ = pred_.probs;
  record(std::nullopt);
}

const Vec& TrajectoryRunner::policy_input(PolicySource source) const {
  return source == PolicySource::original ? pred_.probs : current_;
}

std::size_t TrajectoryRunner::suggest(const PolicyKind& policy, Rng* rng) const {
  if (complete()) throw StateError("every unit has been intervened on");
  switch (policy.type) {
    case PolicyType::ucp:
      return ucp_select(policy_input(policy.source), state_.unit_done, units_,
                        policy.group_score);
    case PolicyType::random:
      if (!rng) throw ValueError("random policy needs an rng");
      return random_select(*rng, state_.unit_done);
    case PolicyType::manual:
      if (state_.t >= policy.sequence.size()) {
        throw ValueError("manual policy sequence exhausted at step " +
                         std::to_string(state_.t));
      }
      return policy.sequence[state_.t];
  }
  return 0;
}

const StepRecord& TrajectoryRunner::intervene(std::size_t unit,
                                              std::span<const double> member_values) {
  if (unit >= units_.size()) {
    throw ValueError("unit " + std::to_string(unit) + " out of range (" +
                     std::to_string(units_.size()) + " units)");
  }
  Vec from_truth;
  if (member_values.empty()) {
    if (!truth_) throw StateError("no ground truth available; values must be supplied");
    for (std::size_t i : units_.members[unit]) from_truth.push_back((*truth_)[i]);
    member_values = from_truth;
  }
  apply_intervention(state_, units_, unit, member_values);
  if (realigner_) {
    current_ = realigner_->step(state_.values, state_.mask, carry_);
    state_.realigned = current_;
  } else {
    current_ = state_.values;
  }
  record(unit);
  return records_.back();
}

void TrajectoryRunner::record(std::optional<std::size_t> unit) {
  StepRecord r;
  r.t = state_.t;
  r.unit = unit;
  for (std::size_t i = 0; i < state_.mask.size(); ++i) {
    if (state_.mask[i]) r.S.push_back(i);
  }
  r.values = state_.values;
  r.concepts = current_;
  r.logits = model_->predict_logits(pred_, current_);
  r.class_probs = softmax(r.logits);
  if (truth_) r.concept_loss = bce_loss(current_, *truth_);
  if (label_) r.correct = argmax(r.logits) == *label_;
  records_.push_back(std::move(r));
}

TrajectoryResult run_trajectory(const ConceptModel& model, const Realigner* realigner,
                                const PolicyKind& policy, std::size_t T,
                                const SampleRecord& sample, const SelectionUnits& units,
                                std::uint64_t stream) {
  if (T > units.size()) {
    throw ValueError("T=" + std::to_string(T) + " exceeds the " +
                     std::to_string(units.size()) + " selection units");
  }
  TrajectoryRunner runner(model, realigner, sample.x, units, sample.c, sample.y);
  std::seed_seq seq{static_cast<std::uint32_t>(policy.seed),
                    static_cast<std::uint32_t>(policy.seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  Rng rng(seq);
  for (std::size_t t = 0; t < T; ++t) runner.intervene(runner.suggest(policy, &rng));
  return runner.result();
}

}  // namespace cirm

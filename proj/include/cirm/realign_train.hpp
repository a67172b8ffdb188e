#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cirm/models.hpp"
#include "cirm/policy.hpp"
#include "cirm/realigner.hpp"
#include "cirm/train_loop.hpp"
#include "cirm/world.hpp"

namespace cirm {

/// Rolls out `T` interventions where the policy reads the latest realigned
/// vector (or c_hat for original-source policies). Returns the units chosen.
std::vector<std::size_t> realigner_trajectory(const Realigner& realigner,
                                              std::span<const double> c_hat,
                                              std::span<const double> truth,
                                              const SelectionUnits& units,
                                              const PolicyKind& policy, std::size_t T,
                                              Rng& rng);

/// Posthoc objective for one sample and a fixed trajectory: mean bce of
/// kappa_t against c over t = 1..T (plus the unintervened u(c_hat) term
/// when include_step0). T = 0 evaluates the single term bce(u(c_hat), c).
double posthoc_loss(Realigner& realigner, std::span<const double> c_hat,
                    std::span<const double> truth, const SelectionUnits& units,
                    const std::vector<std::size_t>& trajectory, bool include_step0,
                    bool accumulate, double grad_scale = 1.0);

struct PosthocResult {
  Realigner realigner;
  TrainHistory history;
  std::uint64_t base_checksum = 0;
};

/// Trains u against a frozen base model. Throws StateError for an unfrozen
/// base and when the base parameters change during training.
PosthocResult train_realigner_posthoc(const ConceptModel& base, const Dataset& train,
                                      const Dataset& val, const SelectionUnits& units,
                                      const RealignerConfig& config, std::uint64_t seed);

/// Validation objective of a trained realigner under its own config.
double posthoc_validation_loss(const Realigner& realigner, const ConceptModel& base,
                               const Dataset& val, const SelectionUnits& units,
                               std::uint64_t seed);

struct ConcReaLoss {
  double value = 0.0;
  Vec d_c_hat;
  Vec d_kappa0;
  Vec d_kappaT;
};

/// 1/2 (bce(c_hat, c) + (bce(kappa_0, c) + gamma^T bce(kappa_T, c)) / (1 + gamma^T)).
ConcReaLoss conc_rea_loss(std::span<const double> c_hat, std::span<const double> c,
                          std::span<const double> kappa0, std::span<const double> kappaT,
                          double gamma, std::size_t T, std::span<const double> weights = {});

struct IntCemReaLoss {
  double total = 0.0;
  double pred = 0.0;
  double conc = 0.0;
  double roll = 0.0;
};

/// End-to-end objective: the post-intervention ce reads f(kappa_T) and the
/// concept term is conc_rea_loss. kappa_0 = u(c_hat) with nothing masked.
/// Gradients reach both the model and the realigner.
IntCemReaLoss intcem_rea_loss(CemModel& model, Realigner& realigner, const SampleRecord& s,
                              const std::vector<std::size_t>& trajectory,
                              const SelectionUnits& units, const IntCemConfig& config,
                              bool accumulate, double grad_scale = 1.0);

struct IntCemReaResult {
  CemModel model;
  Realigner realigner;
  TrainHistory history;
};

IntCemReaResult train_intcem_rea(const Dataset& train, const Dataset& val,
                                 const CemConfig& model_config,
                                 const RealignerConfig& realigner_config,
                                 const IntCemConfig& config, const SelectionUnits& units,
                                 const TrainConfig& train_config, std::uint64_t seed);

struct GridRow {
  std::size_t hidden_layers = 0;
  std::size_t hidden_width = 0;
  double lr = 0.0;
  double val_loss = 0.0;
};

struct GridResult {
  PosthocResult best;
  RealignerConfig best_config;
  std::vector<GridRow> rows;
};

/// Layers {1,2,3} x width {k/2, k, 2k} x `lrs`, selected on validation loss.
GridResult grid_search_realigner(const ConceptModel& base, const Dataset& train,
                                 const Dataset& val, const SelectionUnits& units,
                                 const RealignerConfig& base_config,
                                 const std::vector<double>& lrs, std::uint64_t seed);

}  // namespace cirm

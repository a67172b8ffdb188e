#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/nd/tensor.hpp"

namespace cirm {

struct TrainConfig {
  std::size_t max_epochs = 80;
  std::size_t batch_size = 64;
  double lr = 5e-3;
  double weight_decay = 0.0;
  /// Early stopping: epochs without validation improvement.
  std::size_t patience = 10;
  /// Learning-rate decay on validation plateau.
  std::size_t lr_patience = 4;
  double lr_decay = 0.5;
  double min_lr = 1e-5;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

/// Computes the mean loss over `batch` and accumulates the gradient of that
/// mean into the parameters.
using BatchLossFn = std::function<double(std::span<const std::size_t> batch)>;
using ValLossFn = std::function<double()>;

/// Adam over shuffled mini-batches with early stopping and learning-rate
/// decay driven by the validation loss. Parameters end at the best
/// validation epoch.
void run_training(const std::string& stage, const ParamRefs& params,
                  std::size_t n_train, const BatchLossFn& batch_loss,
                  const ValLossFn& val_loss, const TrainConfig& config, Rng& rng,
                  TrainHistory& history);

}  // namespace cirm

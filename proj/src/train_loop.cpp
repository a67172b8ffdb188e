#include "cirm/train_loop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cirm/error.hpp"
#include "cirm/nd/optim.hpp"

namespace cirm {

nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs}, {"batch_size", c.batch_size},
          {"lr", c.lr},                 {"weight_decay", c.weight_decay},
          {"patience", c.patience},     {"lr_patience", c.lr_patience},
          {"lr_decay", c.lr_decay},     {"min_lr", c.min_lr}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.patience = j.value("patience", c.patience);
  c.lr_patience = j.value("lr_patience", c.lr_patience);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.min_lr = j.value("min_lr", c.min_lr);
  return c;
}

void run_training(const std::string& stage, const ParamRefs& params,
                  std::size_t n_train, const BatchLossFn& batch_loss,
                  const ValLossFn& val_loss, const TrainConfig& config, Rng& rng,
                  TrainHistory& history) {
  if (n_train == 0) throw ValueError(stage + ": empty training set");
  if (config.batch_size == 0) throw ValueError(stage + ": batch_size must be >= 1");

  Adam adam({config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = val_loss();
  std::vector<Vec> best_values;
  for (const ParamTensor* p : params) best_values.push_back(p->values);
  std::size_t since_best = 0;
  std::size_t since_decay = 0;
  double plateau_ref = best;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t end = std::min(n_train, start + config.batch_size);
      zero_grads(params);
      const double loss =
          batch_loss(std::span<const std::size_t>(order.data() + start, end - start));
      if (!std::isfinite(loss)) throw StateError(stage + ": training loss diverged");
      adam.step(params);
      total += loss;
      ++batches;
    }
    const double val = val_loss();
    history.push_back({stage, epoch, total / static_cast<double>(batches), val, adam.lr()});

    if (val < best - 1e-7) {
      best = val;
      for (std::size_t i = 0; i < params.size(); ++i) best_values[i] = params[i]->values;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
    if (val < plateau_ref - 1e-7) {
      plateau_ref = val;
      since_decay = 0;
    } else if (++since_decay >= config.lr_patience) {
      adam.set_lr(std::max(config.min_lr, adam.lr() * config.lr_decay));
      since_decay = 0;
      plateau_ref = val;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->values = best_values[i];
  zero_grads(params);
}

}  // namespace cirm

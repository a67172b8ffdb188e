#pragma once

#include <unordered_map>

#include "cirm/nd/tensor.hpp"

namespace cirm {

void sgd_step(const ParamRefs& params, double lr);

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with moment state keyed by parameter identity.
class Adam {
 public:
  explicit Adam(AdamConfig config);

  void step(const ParamRefs& params);
  double lr() const { return config_.lr; }
  void set_lr(double lr);
  long steps_taken() const { return t_; }

 private:
  struct Moments {
    Vec m;
    Vec v;
  };
  AdamConfig config_;
  long t_ = 0;
  std::unordered_map<const ParamTensor*, Moments> moments_;
};

}  // namespace cirm

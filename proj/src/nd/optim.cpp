#include "cirm/nd/optim.hpp"

#include <cmath>

#include "cirm/error.hpp"

namespace cirm {

void sgd_step(const ParamRefs& params, double lr) {
  if (!(lr > 0.0)) throw ValueError("sgd: learning rate must be positive");
  for (ParamTensor* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) p->values[i] -= lr * p->grad[i];
  }
}

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw ValueError("adam: learning rate must be positive");
}

void Adam::set_lr(double lr) {
  if (!(lr > 0.0)) throw ValueError("adam: learning rate must be positive");
  config_.lr = lr;
}

void Adam::step(const ParamRefs& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (ParamTensor* p : params) {
    Moments& st = moments_[p];
    if (st.m.size() != p->size()) {
      st.m.assign(p->size(), 0.0);
      st.v.assign(p->size(), 0.0);
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i] + config_.weight_decay * p->values[i];
      st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g;
      st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      p->values[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace cirm

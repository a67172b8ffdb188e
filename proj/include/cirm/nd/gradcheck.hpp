#pragma once

#include <functional>
#include <string>

#include "cirm/nd/tensor.hpp"

namespace cirm {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Evaluates the loss; when `accumulate` is true it also adds the analytic
/// gradient into each parameter's `grad` (grads are zeroed by the checker).
using LossFn = std::function<double(bool accumulate)>;

/// Central finite differences against analytic gradients for every element
/// of every parameter. Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const ParamRefs& params, const LossFn& loss,
                           double eps = 1e-5);

}  // namespace cirm

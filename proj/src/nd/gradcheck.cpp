#include "cirm/nd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cirm/error.hpp"

namespace cirm {

GradCheckResult grad_check(const ParamRefs& params, const LossFn& loss,
                           double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ValueError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  zero_grads(params);
  const double base = loss(true);
  if (!std::isfinite(base)) throw ValueError("grad_check: non-finite loss");

  std::vector<Vec> analytic;
  analytic.reserve(params.size());
  for (const ParamTensor* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values[i];
      p.values[i] = saved + eps;
      const double up = loss(false);
      p.values[i] = saved - eps;
      const double down = loss(false);
      p.values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw ValueError("grad_check: non-finite loss while perturbing " + p.name);
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) /
                         std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = i;
      }
    }
  }
  zero_grads(params);
  return result;
}

}  // namespace cirm

#pragma once

#include <functional>
#include <string>

#include "redraw/tensor.hpp"

namespace redraw {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares backward() gradients against central differences for every
// parameter entry. build_loss must rebuild the scalar loss from the current
// parameter values on each call. Relative error uses max(|a|,|n|,1e-8) as
// the denominator.
GradCheckResult grad_check(const std::function<Tensor()>& build_loss,
                           ParameterStore& params, double eps = 1e-3);

}  // namespace redraw

#include "redraw/grad_check.hpp"

#include <cmath>
#include <vector>

namespace redraw {

GradCheckResult grad_check(const std::function<Tensor()>& build_loss,
                           ParameterStore& params, double eps) {
  params.zero_grads();
  Tensor loss = build_loss();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p.grad());

  GradCheckResult res;
  size_t slot = 0;
  for (auto& [name, p] : params) {
    auto& w = p.mutable_values();
    const auto& a = analytic[slot];
    ++slot;
    for (size_t i = 0; i < w.size(); ++i) {
      double saved = w[i];
      double lp, lm;
      {
        NoGradGuard ng;
        w[i] = saved + eps;
        lp = build_loss().scalar();
        w[i] = saved - eps;
        lm = build_loss().scalar();
      }
      w[i] = saved;
      double numeric = (lp - lm) / (2.0 * eps);
      double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
      double rel = std::abs(a[i] - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = static_cast<int64_t>(i);
        res.analytic = a[i];
        res.numeric = numeric;
      }
    }
  }
  params.zero_grads();
  return res;
}

}  // namespace redraw

#pragma once

#include <cstdint>
#include <vector>

#include "redraw/tensor.hpp"

namespace redraw {

enum class OptKind { Sgd, Adam };

// Updates every parameter in the store from its accumulated gradient.
// Adam uses bias-corrected moments (0.9 / 0.999, eps 1e-8). step() does
// not clear gradients; callers pair it with ParameterStore::zero_grads().
class Optimizer {
public:
  Optimizer(ParameterStore& params, OptKind kind, double lr);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

private:
  ParameterStore* params_;
  OptKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace redraw

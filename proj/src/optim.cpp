#include "redraw/optim.hpp"

#include <cmath>

namespace redraw {

Optimizer::Optimizer(ParameterStore& params, OptKind kind, double lr)
    : params_(&params), kind_(kind), lr_(lr) {
  if (kind_ == OptKind::Adam) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, p] : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
}

void Optimizer::step() {
  if (kind_ == OptKind::Sgd) {
    for (auto& [name, p] : *params_) {
      const auto& g = p.grad();
      auto& w = p.mutable_values();
      for (size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
    }
    return;
  }
  ++t_;
  double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  size_t slot = 0;
  for (auto& [name, p] : *params_) {
    const auto& g = p.grad();
    auto& w = p.mutable_values();
    auto& m = m_[slot];
    auto& v = v_[slot];
    ++slot;
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace redraw

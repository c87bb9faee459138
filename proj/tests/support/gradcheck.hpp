#pragma once

#include <cmath>
#include <functional>
#include <span>

#include "pgnmt/tensor.hpp"

namespace pgnmt::testing {

// Relative error with a floor so exact-zero pairs compare clean.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max(std::abs(analytic) + std::abs(numeric), floor);
  return std::abs(analytic - numeric) / denom;
}

// Central finite differences (h = 1e-5) against one tape backward pass.
// `loss_fn` must recompute the scalar loss from the current values of
// `inputs`; it is called with no active tape for the numeric evaluations.
inline double max_rel_err_fd(const std::function<Tensor()>& loss_fn, std::span<Tensor> inputs,
                             double h = 1e-5) {
  for (Tensor& t : inputs) t.zero_grad();
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(static_cast<std::size_t>(t.numel()), 0.0);
  }

  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto vals = inputs[ti].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double up = loss_fn().item();
      vals[i] = keep - h;
      const double down = loss_fn().item();
      vals[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[ti][i], numeric));
    }
  }
  return worst;
}

}  // namespace pgnmt::testing

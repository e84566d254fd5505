#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sglmm {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global-norm gradient clipping threshold; <= 0 disables it.
  double clip_norm = 0.0;
  long t = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(std::size_t dim, double lr_) : lr(lr_), m(dim, 0.0), v(dim, 0.0) {}
};

struct AdamStepInfo {
  bool clipped = false;
  double grad_norm = 0.0;
};

// One bias-corrected Adam update that *ascends* `objective_grad`
// (implemented as descent on the negated objective). Throws NumericalError
// naming the step index if any gradient entry is non-finite.
AdamStepInfo adam_step(AdamState& state, std::span<double> params, std::span<const double> objective_grad);

}  // namespace sglmm

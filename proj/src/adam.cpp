#include "sglmm/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sglmm/error.hpp"

namespace sglmm {

AdamStepInfo adam_step(AdamState& state, std::span<double> params, std::span<const double> objective_grad) {
  const std::size_t n = params.size();
  if (objective_grad.size() != n || state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment sizes differ");
  }
  AdamStepInfo info;
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = objective_grad[i];
    if (!std::isfinite(g)) {
      throw NumericalError("adam_step: non-finite gradient at step " + std::to_string(state.t + 1) +
                           " (coordinate " + std::to_string(i) + ")");
    }
    sq += g * g;
  }
  info.grad_norm = std::sqrt(sq);
  double scale = 1.0;
  if (state.clip_norm > 0.0 && info.grad_norm > state.clip_norm) {
    scale = state.clip_norm / info.grad_norm;
    info.clipped = true;
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = -scale * objective_grad[i];  // loss gradient
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
  return info;
}

}  // namespace sglmm

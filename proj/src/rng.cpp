#include "sglmm/rng.hpp"

namespace sglmm {

void Rng::fill_normal(std::span<double> out) {
  for (double& v : out) v = normal();
}

}  // namespace sglmm

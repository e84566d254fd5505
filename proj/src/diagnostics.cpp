#include <algorithm>
#include <cmath>
#include <limits>

#include "sglmm/mcmc.hpp"

namespace sglmm {
namespace {

double autocov(const Eigen::VectorXd& x, Eigen::Index lag) {
  const Eigen::Index n = x.size();
  return x.head(n - lag).dot(x.tail(n - lag)) / static_cast<double>(n);
}

double ess_1d(const Eigen::VectorXd& draws) {
  const Eigen::Index n = draws.size();
  const Eigen::VectorXd x = draws.array() - draws.mean();
  const double c0 = autocov(x, 0);
  if (!(c0 > 0.0)) return 1.0;

  // Sum of paired autocorrelations, truncated at the first non-positive pair
  // and forced monotone.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
    double pair = (autocov(x, 2 * k) + autocov(x, 2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  const double nd = static_cast<double>(n);
  return std::clamp(nd / std::max(tau, 1.0 / nd), 1.0, nd);
}

}  // namespace

Eigen::VectorXd ess(const Eigen::MatrixXd& samples) {
  Eigen::VectorXd out(samples.cols());
  for (Eigen::Index c = 0; c < samples.cols(); ++c) out(c) = ess_1d(samples.col(c));
  return out;
}

Eigen::VectorXd batch_means_se(const Eigen::MatrixXd& samples) {
  const Eigen::Index n = samples.rows();
  const auto b = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(n))));
  const Eigen::Index a = b > 0 ? n / b : 0;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(samples.cols());
  if (a < 2) return out;
  const Eigen::Index used = a * b;
  for (Eigen::Index c = 0; c < samples.cols(); ++c) {
    const auto col = samples.col(c).head(used);
    const double mean = col.mean();
    double ss = 0.0;
    for (Eigen::Index k = 0; k < a; ++k) {
      const double d = col.segment(k * b, b).mean() - mean;
      ss += d * d;
    }
    const double var_hat = static_cast<double>(b) * ss / static_cast<double>(a - 1);
    out(c) = std::sqrt(var_hat / static_cast<double>(used));
  }
  return out;
}

}  // namespace sglmm

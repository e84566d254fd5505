#include "sglmm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sglmm/error.hpp"

namespace sglmm {

PredictionSet predict(const Eigen::MatrixXd& draws, const ParameterLayout& layout, const Eigen::MatrixXd& X_test,
                      const Eigen::MatrixXd& phi_test, bool keep_draws) {
  const auto p = static_cast<Eigen::Index>(layout.p());
  const auto m = static_cast<Eigen::Index>(layout.m());
  if (static_cast<std::size_t>(draws.cols()) != layout.dim() || X_test.cols() != p || phi_test.cols() != m ||
      X_test.rows() != phi_test.rows()) {
    throw std::invalid_argument("predict: draws, covariates and basis rows do not conform");
  }
  if (draws.rows() == 0) throw std::invalid_argument("predict: need at least one draw");
  const Family family = layout.family();
  const Eigen::Index n_test = X_test.rows();

  // Coefficient blocks for all draws at once: eta = B_x X' + B_phi Phi'.
  const Eigen::MatrixXd eta = draws.leftCols(p) * X_test.transpose() + draws.middleCols(p, m) * phi_test.transpose();
  PredictionSet out;
  out.point_pred = Eigen::VectorXd::Zero(n_test);
  if (keep_draws) out.pred_draws.resize(draws.rows(), n_test);
  for (Eigen::Index s = 0; s < draws.rows(); ++s) {
    for (Eigen::Index i = 0; i < n_test; ++i) {
      const double mu = inverse_link(family, eta(s, i));
      out.point_pred(i) += mu;
      if (keep_draws) out.pred_draws(s, i) = mu;
    }
  }
  out.point_pred /= static_cast<double>(draws.rows());
  return out;
}

double rmspe(const Eigen::VectorXd& z_true, const Eigen::VectorXd& z_pred) {
  if (z_true.size() == 0) throw std::invalid_argument("rmspe: empty input");
  if (z_true.size() != z_pred.size()) throw std::invalid_argument("rmspe: length mismatch");
  return std::sqrt((z_true - z_pred).squaredNorm() / static_cast<double>(z_true.size()));
}

double auc(const Eigen::VectorXd& z_true, const Eigen::VectorXd& scores) {
  if (z_true.size() != scores.size()) throw std::invalid_argument("auc: length mismatch");
  const Eigen::Index n = z_true.size();
  // Rank-sum form of the Mann-Whitney statistic; tied scores share their
  // average rank, which is exactly the half-credit convention.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });
  double rank_sum_pos = 0.0;
  double n_pos = 0.0;
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && scores(order[static_cast<std::size_t>(j + 1)]) == scores(order[static_cast<std::size_t>(i)])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) {
      const double z = z_true(order[static_cast<std::size_t>(k)]);
      if (z != 0.0 && z != 1.0) throw std::invalid_argument("auc: labels must be 0/1");
      if (z == 1.0) {
        rank_sum_pos += avg_rank;
        n_pos += 1.0;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw DataError("auc: both classes must be present");
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double quantile_type7(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

PosteriorSummary summarize(const Eigen::MatrixXd& draws, const std::vector<std::string>& names, int bins) {
  if (static_cast<std::size_t>(draws.cols()) != names.size()) {
    throw std::invalid_argument("summarize: one name per column required");
  }
  if (draws.rows() < 10) throw std::invalid_argument("summarize: need at least 10 draws");
  if (bins < 1) throw std::invalid_argument("summarize: bins must be >= 1");
  PosteriorSummary out;
  const auto n = static_cast<double>(draws.rows());
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    ParameterSummary s;
    s.name = names[static_cast<std::size_t>(c)];
    const auto col = draws.col(c);
    s.mean = col.mean();
    s.sd = std::sqrt((col.array() - s.mean).square().sum() / (n - 1.0));
    std::vector<double> v(col.data(), col.data() + col.size());
    s.q025 = quantile_type7(v, 0.025);
    s.q50 = quantile_type7(v, 0.5);
    s.q975 = quantile_type7(v, 0.975);

    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    const double width = hi > lo ? (hi - lo) / bins : 1.0;
    s.breaks.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) s.breaks[static_cast<std::size_t>(b)] = lo + width * b;
    s.masses.assign(static_cast<std::size_t>(bins), 0.0);
    for (double x : v) {
      auto b = static_cast<int>(std::floor((x - lo) / width));
      b = std::clamp(b, 0, bins - 1);
      s.masses[static_cast<std::size_t>(b)] += 1.0 / n;
    }
    out.params.push_back(std::move(s));
  }
  return out;
}

}  // namespace sglmm

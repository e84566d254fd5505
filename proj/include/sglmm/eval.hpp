#pragma once
// Held-out prediction, accuracy metrics and posterior summaries.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "sglmm/family.hpp"
#include "sglmm/glmm.hpp"

namespace sglmm {

struct PredictionSet {
  Eigen::VectorXd point_pred;  // n_test, response scale
  Eigen::MatrixXd pred_draws;  // S x n_test, per-draw conditional means
};

// mu_s = g^{-1}(X_test beta_s + Phi_test delta_s) for every row s of `draws`
// (packed under `layout`); the point prediction averages mu_s over draws.
PredictionSet predict(const Eigen::MatrixXd& draws, const ParameterLayout& layout, const Eigen::MatrixXd& X_test,
                      const Eigen::MatrixXd& phi_test, bool keep_draws = false);

double rmspe(const Eigen::VectorXd& z_true, const Eigen::VectorXd& z_pred);

// Mann-Whitney AUC with half credit for tied scores.
double auc(const Eigen::VectorXd& z_true, const Eigen::VectorXd& scores);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
  std::vector<double> breaks;  // bins + 1 edges
  std::vector<double> masses;  // bins, sums to 1
};

struct PosteriorSummary {
  std::vector<ParameterSummary> params;
};

// Type-7 (linear interpolation) sample quantile.
double quantile_type7(std::vector<double> values, double prob);

PosteriorSummary summarize(const Eigen::MatrixXd& draws, const std::vector<std::string>& names, int bins = 50);

}  // namespace sglmm

#pragma once
// Matérn kernels, dense covariance construction, Gaussian-process draws,
// leading eigenbases and synthetic basis-SGLMM scenarios.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sglmm/family.hpp"
#include "sglmm/rng.hpp"

namespace sglmm {

struct Location2D {
  double x = 0.0;
  double y = 0.0;
};

inline double euclidean(const Location2D& a, const Location2D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// C(d) = marg_var * 2^{1-nu}/Gamma(nu) * (sqrt(2 nu) d / range)^nu * K_nu(sqrt(2 nu) d / range)
// nu in {0.5, 1.5, 2.5} take closed forms; any other positive nu goes through
// the modified Bessel function of the second kind.
struct MaternParams {
  double nu = 0.5;
  double range = 0.1;
  double marg_var = 1.0;

  void validate() const;
};

double matern_kernel(double d, const MaternParams& params);

struct CovarianceMatrix {
  Eigen::MatrixXd entries;
  double jitter = 0.0;
  // Non-fatal issues found while building, e.g. coincident locations with
  // no jitter.
  std::vector<std::string> warnings;

  Eigen::Index size() const { return entries.rows(); }
};

inline double default_jitter(const MaternParams& p) { return 1e-8 * p.marg_var; }

CovarianceMatrix build_covariance(std::span<const Location2D> locations,
                                  const MaternParams& params, double jitter);

// Lower Cholesky factor. On failure retries with extra diagonal jitter of
// 1e-8 * max diag, doubling up to three times, then throws NumericalError.
Eigen::MatrixXd cholesky_lower(const CovarianceMatrix& cov);

// L z with z ~ N(0, I).
Eigen::VectorXd sample_gp(const CovarianceMatrix& cov, Rng& rng);
// Same draw as above, factoring `cov` in place to avoid a second N x N copy.
Eigen::VectorXd sample_gp(CovarianceMatrix&& cov, Rng& rng);

enum class PriorCovMode { identity, eigenvalue_diagonal };

std::string_view to_string(PriorCovMode mode);

struct BasisSystem {
  Eigen::MatrixXd phi;          // N x m, orthonormal columns
  Eigen::VectorXd eigenvalues;  // length m, non-increasing
  PriorCovMode prior_cov_mode = PriorCovMode::identity;

  Eigen::Index rows() const { return phi.rows(); }
  Eigen::Index size() const { return phi.cols(); }

  // Diagonal of Sigma_delta.
  Eigen::VectorXd prior_cov_diagonal() const;
  // Basis restricted to a subset of locations (rows); eigenvalues kept.
  BasisSystem select_rows(std::span<const std::size_t> rows) const;
};

// The m leading eigenpairs of `cov`, sorted by descending eigenvalue. Each
// eigenvector's largest-magnitude entry is made positive so the basis is a
// deterministic function of the matrix.
BasisSystem leading_eigenbasis(const CovarianceMatrix& cov, int m,
                               PriorCovMode mode = PriorCovMode::identity);
BasisSystem leading_eigenbasis(CovarianceMatrix&& cov, int m,
                               PriorCovMode mode = PriorCovMode::identity);

struct SyntheticScenario {
  Family family = Family::gaussian;
  MaternParams matern{};
  std::vector<double> beta_true{1.0, 1.0};
  int n_train = 1600;
  int n_test = 400;
  // tau^2 (gaussian), kappa (negbin) or alpha (gamma); ignored otherwise.
  double extra_param_true = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Generative default for the family's extra parameter: tau^2 = 1, kappa = 2,
// alpha = 2.
double default_extra_param(Family family);

struct SpatialDataset {
  std::vector<Location2D> locations;
  Eigen::MatrixXd X;  // N x p
  Eigen::VectorXd Z;  // N
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  Family family = Family::gaussian;

  std::size_t size() const { return locations.size(); }
  std::size_t n_covariates() const { return static_cast<std::size_t>(X.cols()); }

  // Throws DataError on split or support violations.
  void validate() const;
};

struct TruthRecord {
  std::vector<double> beta;
  Eigen::VectorXd omega;
  double extra_param = 0.0;
  double marg_var = 1.0;
};

struct SimulationResult {
  SpatialDataset dataset;
  TruthRecord truth;
};

// Locations ~ Unif([0,1]^2), covariates ~ Unif(-1,1), omega ~ GP(0, Matérn),
// eta = X beta + omega, Z ~ F(eta, extra). The first n_train rows form the
// training split. Pure function of the scenario.
SimulationResult simulate_dataset(const SyntheticScenario& scenario);

// Z_i ~ F(. | eta_i, extra) with the family's link.
Eigen::VectorXd sample_responses(Family family, const Eigen::VectorXd& eta, double extra_param,
                                 Rng& rng);

// Checks a single response value against the family support.
bool in_support(Family family, double z);

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows);
Eigen::VectorXd select_rows(const Eigen::VectorXd& v, std::span<const std::size_t> rows);

}  // namespace sglmm

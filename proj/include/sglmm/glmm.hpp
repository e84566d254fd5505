#pragma once
// Basis-SGLMM log joint density and its analytic gradient.
//
//   Z_i | theta ~ F(. | eta_i, gamma),   eta = X beta + Phi delta
//   delta | sigma^2 ~ N(0, sigma^2 Sigma_delta)
//   beta_k ~ N(beta_mean_k, beta_var_k),  log sigma^2 ~ N(sigma_mean, sigma_var)
//   gaussian: log tau^2 ~ N(tau_mean, tau_var)
//   negbin:   kappa ~ Gamma(kappa_shape, kappa_rate), sampled as log kappa
//   gamma:    log alpha ~ N(alpha_mean, alpha_var)
//
// Packed parameter order is (beta_1..beta_p, delta_1..delta_m, log sigma^2,
// [gamma]). A parameter pinned through FixedParams is dropped from the
// packed vector and treated as known.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "sglmm/family.hpp"
#include "sglmm/spatial.hpp"

namespace sglmm {

struct PriorSpec {
  std::vector<double> beta_mean;
  std::vector<double> beta_var;
  double sigma_mean = 1.0;
  double sigma_var = 1.0;
  double tau_mean = 0.0;
  double tau_var = 1.0;
  double kappa_shape = 2.0;
  double kappa_rate = 1.0;
  double alpha_mean = 1.0;
  double alpha_var = 1.0;

  // beta_k ~ N(0, 100) and the remaining hyperparameters at their
  // simulation-study values.
  static PriorSpec defaults(std::size_t p);
  void validate(std::size_t p) const;
};

struct FixedParams {
  std::optional<double> log_sigma2;
  // Transformed extra parameter (log tau^2, log kappa or log alpha).
  std::optional<double> extra_t;
};

class ParameterLayout {
 public:
  ParameterLayout() = default;
  ParameterLayout(Family family, std::size_t p, std::size_t m, const FixedParams& fixed = {});

  std::size_t dim() const { return dim_; }
  std::size_t p() const { return p_; }
  std::size_t m() const { return m_; }
  std::size_t beta_offset() const { return 0; }
  std::size_t delta_offset() const { return p_; }
  bool has_log_sigma2() const { return sigma_index_.has_value(); }
  bool has_extra() const { return extra_index_.has_value(); }
  std::size_t log_sigma2_index() const { return sigma_index_.value(); }
  std::size_t extra_index() const { return extra_index_.value(); }
  Family family() const { return family_; }

  std::vector<std::string> names() const;

 private:
  Family family_ = Family::gaussian;
  std::size_t p_ = 0;
  std::size_t m_ = 0;
  std::size_t dim_ = 0;
  std::optional<std::size_t> sigma_index_;
  std::optional<std::size_t> extra_index_;
};

struct ParameterParts {
  Eigen::VectorXd beta;
  Eigen::VectorXd delta;
  std::optional<double> log_sigma2;
  std::optional<double> gamma_t;

  bool operator==(const ParameterParts&) const = default;
};

Eigen::VectorXd pack(const ParameterParts& parts, const ParameterLayout& layout);
ParameterParts unpack(const Eigen::VectorXd& theta, const ParameterLayout& layout);

// Sufficient statistics of Z that do not depend on theta.
struct ResponseConstants {
  double log_factorial_sum = 0.0;  // sum lgamma(z + 1), count families
  double log_z_sum = 0.0;          // sum log z, gamma family
  std::vector<double> unique_values;
  std::vector<double> unique_counts;

  static ResponseConstants compute(Family family, const Eigen::VectorXd& Z);
};

// Immutable fitting problem: training rows only.
class ModelSpec {
 public:
  ModelSpec(Family family, PriorSpec priors, Eigen::MatrixXd X, Eigen::VectorXd Z,
            Eigen::MatrixXd phi, Eigen::VectorXd prior_cov_diag, FixedParams fixed = {});

  // Training rows of `dataset` with the matching rows of a basis built over
  // all locations.
  static ModelSpec from_dataset(const SpatialDataset& dataset, const BasisSystem& basis,
                                PriorSpec priors, FixedParams fixed = {});

  Family family() const { return family_; }
  const PriorSpec& priors() const { return priors_; }
  const FixedParams& fixed() const { return fixed_; }
  const ParameterLayout& layout() const { return layout_; }
  const Eigen::MatrixXd& X() const { return X_; }
  const Eigen::VectorXd& Z() const { return Z_; }
  const Eigen::MatrixXd& phi() const { return phi_; }
  const Eigen::VectorXd& prior_cov_diag() const { return prior_cov_diag_; }
  const ResponseConstants& constants() const { return constants_; }
  std::size_t n() const { return static_cast<std::size_t>(Z_.size()); }
  std::size_t dim() const { return layout_.dim(); }

  double log_sigma2(const Eigen::VectorXd& theta) const;
  // Transformed extra parameter; 0 for families without one.
  double extra_t(const Eigen::VectorXd& theta) const;
  // Prior mean point: beta at its prior mean, delta at 0, log sigma^2 and
  // gamma at their prior means (kappa at log of the Gamma prior mean).
  Eigen::VectorXd prior_center() const;

 private:
  Family family_;
  PriorSpec priors_;
  FixedParams fixed_;
  ParameterLayout layout_;
  Eigen::MatrixXd X_;
  Eigen::VectorXd Z_;
  Eigen::MatrixXd phi_;
  Eigen::VectorXd prior_cov_diag_;
  ResponseConstants constants_;
};

// X beta + Phi delta
Eigen::VectorXd linear_predictor(const Eigen::VectorXd& theta, const ModelSpec& spec);

// Sum of exact log densities/masses. Throws DataError on support violations
// and std::invalid_argument on a length mismatch.
double log_likelihood(Family family, const Eigen::VectorXd& Z, const Eigen::VectorXd& eta,
                      double gamma_t = 0.0);

// Likelihood using the spec's cached response constants; fills the gradient
// with respect to eta (and gamma_t) when the output pointers are non-null.
double log_likelihood(const ModelSpec& spec, const Eigen::VectorXd& eta, double gamma_t,
                      Eigen::VectorXd* grad_eta, double* grad_gamma);

double log_prior(const Eigen::VectorXd& theta, const ModelSpec& spec);
double log_joint(const Eigen::VectorXd& theta, const ModelSpec& spec);
Eigen::VectorXd grad_log_joint(const Eigen::VectorXd& theta, const ModelSpec& spec);
// One pass computing both.
double log_joint_and_grad(const Eigen::VectorXd& theta, const ModelSpec& spec,
                          Eigen::VectorXd& grad);

}  // namespace sglmm

#include "sglmm/spatial.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sglmm/error.hpp"

namespace sglmm {

void MaternParams::validate() const {
  if (!(nu > 0.0) || !(range > 0.0) || !(marg_var > 0.0) || !std::isfinite(nu) ||
      !std::isfinite(range) || !std::isfinite(marg_var)) {
    throw std::invalid_argument("Matérn parameters must be finite and strictly positive");
  }
}

double matern_kernel(double d, const MaternParams& params) {
  if (!std::isfinite(d) || d < 0.0) throw std::domain_error("matern_kernel: distance must be finite and >= 0");
  if (d == 0.0) return params.marg_var;
  const double nu = params.nu;
  if (nu == 0.5) return params.marg_var * std::exp(-d / params.range);
  if (nu == 1.5) {
    const double r = std::sqrt(3.0) * d / params.range;
    return params.marg_var * (1.0 + r) * std::exp(-r);
  }
  if (nu == 2.5) {
    const double r = std::sqrt(5.0) * d / params.range;
    return params.marg_var * (1.0 + r + r * r / 3.0) * std::exp(-r);
  }
  const double r = std::sqrt(2.0 * nu) * d / params.range;
  if (r > 700.0) return 0.0;
  const double log_scale = (1.0 - nu) * std::log(2.0) - std::lgamma(nu) + nu * std::log(r);
  return params.marg_var * std::exp(log_scale) * std::cyl_bessel_k(nu, r);
}

CovarianceMatrix build_covariance(std::span<const Location2D> locations,
                                  const MaternParams& params, double jitter) {
  if (locations.empty()) throw std::invalid_argument("build_covariance: need at least one location");
  if (!(jitter >= 0.0)) throw std::invalid_argument("build_covariance: jitter must be >= 0");
  params.validate();

  const auto n = static_cast<Eigen::Index>(locations.size());
  CovarianceMatrix cov;
  cov.jitter = jitter;
  cov.entries.resize(n, n);
  std::size_t coincident = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cov.entries(j, j) = params.marg_var + jitter;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double d = euclidean(locations[i], locations[j]);
      if (d == 0.0) ++coincident;
      const double c = matern_kernel(d, params);
      cov.entries(i, j) = c;
      cov.entries(j, i) = c;
    }
  }
  if (coincident > 0 && jitter == 0.0) {
    std::ostringstream msg;
    msg << coincident << " coincident location pair(s) with zero jitter: covariance is singular";
    cov.warnings.push_back(msg.str());
  }
  return cov;
}

namespace {

// Factor `a` in place (lower triangle). The strict upper triangle is never
// touched by dpotrf, so a failed attempt can be undone from it.
void factor_in_place(Eigen::MatrixXd& a) {
  const auto n = a.rows();
  const Eigen::VectorXd diag = a.diagonal();
  const double base = 1e-8 * std::max(diag.maxCoeff(), 1e-300);
  double extra = 0.0;
  for (int attempt = 0; attempt <= 4; ++attempt) {
    if (attempt > 0) {
      extra = base * std::ldexp(1.0, attempt - 1);
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = j + 1; i < n; ++i) a(i, j) = a(j, i);
        a(j, j) = diag(j) + extra;
      }
    }
    const lapack_int info = LAPACKE_dpotrf(LAPACK_COL_MAJOR, 'L', static_cast<lapack_int>(n),
                                           a.data(), static_cast<lapack_int>(n));
    if (info == 0) {
      a.triangularView<Eigen::StrictlyUpper>().setZero();
      return;
    }
    if (info < 0) throw std::logic_error("dpotrf: invalid argument");
  }
  std::ostringstream msg;
  msg << "Cholesky factorization failed even with extra jitter " << extra
      << "; increase the covariance jitter";
  throw NumericalError(msg.str());
}

}  // namespace

Eigen::MatrixXd cholesky_lower(const CovarianceMatrix& cov) {
  Eigen::MatrixXd a = cov.entries;
  factor_in_place(a);
  return a;
}

Eigen::VectorXd sample_gp(const CovarianceMatrix& cov, Rng& rng) {
  CovarianceMatrix copy{cov.entries, cov.jitter, {}};
  return sample_gp(std::move(copy), rng);
}

Eigen::VectorXd sample_gp(CovarianceMatrix&& cov, Rng& rng) {
  factor_in_place(cov.entries);
  Eigen::VectorXd z(cov.size());
  rng.fill_normal({z.data(), static_cast<std::size_t>(z.size())});
  return cov.entries.triangularView<Eigen::Lower>() * z;
}

std::string_view to_string(PriorCovMode mode) {
  return mode == PriorCovMode::identity ? "identity" : "eigenvalue-diagonal";
}

Eigen::VectorXd BasisSystem::prior_cov_diagonal() const {
  if (prior_cov_mode == PriorCovMode::identity) return Eigen::VectorXd::Ones(size());
  return eigenvalues;
}

BasisSystem BasisSystem::select_rows(std::span<const std::size_t> rows) const {
  return BasisSystem{sglmm::select_rows(phi, rows), eigenvalues, prior_cov_mode};
}

BasisSystem leading_eigenbasis(const CovarianceMatrix& cov, int m, PriorCovMode mode) {
  CovarianceMatrix copy{cov.entries, cov.jitter, {}};
  return leading_eigenbasis(std::move(copy), m, mode);
}

BasisSystem leading_eigenbasis(CovarianceMatrix&& cov, int m, PriorCovMode mode) {
  const auto n = static_cast<lapack_int>(cov.size());
  if (m < 1 || m > n) throw std::invalid_argument("leading_eigenbasis: need 1 <= m <= N");

  lapack_int found = 0;
  Eigen::VectorXd w(n);
  Eigen::MatrixXd z(n, m);
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(m));
  const lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n, cov.entries.data(),
                                         n, 0.0, 0.0, n - m + 1, n, 0.0, &found, w.data(),
                                         z.data(), n, isuppz.data());
  if (info != 0 || found != m) {
    throw NumericalError("symmetric eigensolver failed (dsyevr info=" + std::to_string(info) + ")");
  }

  BasisSystem basis;
  basis.prior_cov_mode = mode;
  basis.phi.resize(n, m);
  basis.eigenvalues.resize(m);
  // dsyevr returns ascending order; flip to descending.
  for (int k = 0; k < m; ++k) {
    const int src = m - 1 - k;
    basis.eigenvalues(k) = w(src);
    Eigen::Index imax = 0;
    z.col(src).cwiseAbs().maxCoeff(&imax);
    const double sign = z(imax, src) < 0.0 ? -1.0 : 1.0;
    basis.phi.col(k) = sign * z.col(src);
  }
  if (basis.eigenvalues(m - 1) <= 0.0) {
    throw NumericalError("leading_eigenbasis: covariance has non-positive eigenvalues among the leading m");
  }
  return basis;
}

void SyntheticScenario::validate() const {
  matern.validate();
  if (n_train <= 0 || n_test <= 0) throw std::invalid_argument("scenario: n_train and n_test must be positive");
  if (beta_true.empty()) throw std::invalid_argument("scenario: beta_true must be non-empty");
  if (has_extra_param(family) && !(extra_param_true > 0.0)) {
    throw std::invalid_argument("scenario: extra parameter must be positive");
  }
}

double default_extra_param(Family family) {
  switch (family) {
    case Family::gaussian: return 1.0;
    case Family::negbin: return 2.0;
    case Family::gamma: return 2.0;
    default: return 0.0;
  }
}

bool in_support(Family family, double z) {
  if (!std::isfinite(z)) return false;
  switch (family) {
    case Family::gaussian: return true;
    case Family::bernoulli: return z == 0.0 || z == 1.0;
    case Family::poisson:
    case Family::negbin: return z >= 0.0 && z == std::floor(z);
    case Family::gamma: return z > 0.0;
  }
  return false;
}

void SpatialDataset::validate() const {
  const std::size_t n = locations.size();
  if (static_cast<std::size_t>(X.rows()) != n || static_cast<std::size_t>(Z.size()) != n) {
    throw DataError("dataset: locations, covariates and responses differ in length");
  }
  if (train_idx.size() + test_idx.size() != n) throw DataError("dataset: split does not cover all rows");
  std::vector<char> seen(n, 0);
  for (const auto* idx : {&train_idx, &test_idx}) {
    for (std::size_t i : *idx) {
      if (i >= n || seen[i]) throw DataError("dataset: split indices overlap or are out of range");
      seen[i] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_support(family, Z(static_cast<Eigen::Index>(i)))) {
      std::ostringstream msg;
      msg << "dataset: response " << Z(static_cast<Eigen::Index>(i)) << " at row " << i
          << " outside the " << to_string(family) << " support";
      throw DataError(msg.str());
    }
  }
}

Eigen::VectorXd sample_responses(Family family, const Eigen::VectorXd& eta, double extra_param,
                                 Rng& rng) {
  Eigen::VectorXd z(eta.size());
  auto& eng = rng.engine();
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double mu = inverse_link(family, eta(i));
    switch (family) {
      case Family::gaussian:
        z(i) = mu + std::sqrt(extra_param) * rng.normal();
        break;
      case Family::bernoulli:
        z(i) = rng.uniform() < mu ? 1.0 : 0.0;
        break;
      case Family::poisson:
        z(i) = static_cast<double>(std::poisson_distribution<long long>(mu)(eng));
        break;
      case Family::negbin: {
        // Gamma-Poisson mixture: lambda ~ Gamma(kappa, mu / kappa).
        const double lambda = std::gamma_distribution<double>(extra_param, mu / extra_param)(eng);
        z(i) = lambda > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(lambda)(eng)) : 0.0;
        break;
      }
      case Family::gamma: {
        double v = std::gamma_distribution<double>(extra_param, mu / extra_param)(eng);
        z(i) = std::max(v, std::numeric_limits<double>::min());
        break;
      }
    }
  }
  return z;
}

SimulationResult simulate_dataset(const SyntheticScenario& scenario) {
  scenario.validate();
  Rng rng(scenario.seed);
  const std::size_t n = static_cast<std::size_t>(scenario.n_train + scenario.n_test);
  const auto p = static_cast<Eigen::Index>(scenario.beta_true.size());

  SimulationResult out;
  SpatialDataset& ds = out.dataset;
  ds.family = scenario.family;
  ds.locations.resize(n);
  for (auto& loc : ds.locations) {
    loc.x = rng.uniform();
    loc.y = rng.uniform();
  }
  ds.X.resize(static_cast<Eigen::Index>(n), p);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < p; ++k) ds.X(static_cast<Eigen::Index>(i), k) = rng.uniform(-1.0, 1.0);
  }

  CovarianceMatrix cov = build_covariance(ds.locations, scenario.matern, default_jitter(scenario.matern));
  Eigen::VectorXd omega = sample_gp(std::move(cov), rng);

  const Eigen::Map<const Eigen::VectorXd> beta(scenario.beta_true.data(), p);
  const Eigen::VectorXd eta = ds.X * beta + omega;
  ds.Z = sample_responses(scenario.family, eta, scenario.extra_param_true, rng);

  ds.train_idx.resize(static_cast<std::size_t>(scenario.n_train));
  ds.test_idx.resize(static_cast<std::size_t>(scenario.n_test));
  for (std::size_t i = 0; i < ds.train_idx.size(); ++i) ds.train_idx[i] = i;
  for (std::size_t i = 0; i < ds.test_idx.size(); ++i) ds.test_idx[i] = ds.train_idx.size() + i;

  out.truth.beta = scenario.beta_true;
  out.truth.omega = std::move(omega);
  out.truth.extra_param = has_extra_param(scenario.family) ? scenario.extra_param_true : 0.0;
  out.truth.marg_var = scenario.matern.marg_var;
  return out;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out(static_cast<Eigen::Index>(r), c) = m(static_cast<Eigen::Index>(rows[r]), c);
    }
  }
  return out;
}

Eigen::VectorXd select_rows(const Eigen::VectorXd& v, std::span<const std::size_t> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(static_cast<Eigen::Index>(rows[r]));
  return out;
}

}  // namespace sglmm

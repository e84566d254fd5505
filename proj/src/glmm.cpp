#include "sglmm/glmm.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "sglmm/error.hpp"
#include "sglmm/simd.hpp"

namespace sglmm {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}
std::span<double> as_span(Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.data() + c * m.rows(), static_cast<std::size_t>(m.rows())};
}

// Non-finite instead of an exception off the positive axis or near the pole
// (e.g. an underflowed kappa), so samplers can treat it as a divergence.
using NoThrow = boost::math::policies::policy<boost::math::policies::overflow_error<boost::math::policies::ignore_error>,
                                              boost::math::policies::pole_error<boost::math::policies::ignore_error>,
                                              boost::math::policies::evaluation_error<boost::math::policies::ignore_error>>;

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) return std::numeric_limits<double>::quiet_NaN();
  return boost::math::digamma(x, NoThrow{});
}

double normal_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * d * d / var;
}

// Core likelihood. grad_eta is overwritten when non-null.
double family_loglik(Family family, const Eigen::VectorXd& Z, const Eigen::VectorXd& eta,
                     double gamma_t, const ResponseConstants& k, Eigen::VectorXd* grad_eta,
                     double* grad_gamma) {
  const auto n = Z.size();
  const double dn = static_cast<double>(n);
  if (grad_eta) grad_eta->resize(n);
  if (grad_gamma) *grad_gamma = 0.0;
  if (n == 0) return 0.0;

  switch (family) {
    case Family::gaussian: {
      const double inv_tau2 = std::exp(-gamma_t);
      Eigen::VectorXd r = Z - eta;
      const double ss = simd::dot(as_span(r), as_span(r));
      if (grad_eta) *grad_eta = r * inv_tau2;
      if (grad_gamma) *grad_gamma = -0.5 * dn + 0.5 * ss * inv_tau2;
      return -0.5 * dn * (kLog2Pi + gamma_t) - 0.5 * ss * inv_tau2;
    }
    case Family::poisson: {
      Eigen::VectorXd mu(n);
      simd::exp(as_span(eta), as_span(mu));
      const double ll = simd::dot(as_span(Z), as_span(eta)) - simd::sum(as_span(mu)) - k.log_factorial_sum;
      if (grad_eta) *grad_eta = Z - mu;
      return ll;
    }
    case Family::bernoulli: {
      // softplus(eta) = max(eta, 0) + log(1 + exp(-|eta|))
      Eigen::VectorXd t = -eta.cwiseAbs();
      simd::exp(as_span(t), as_span(t));
      Eigen::VectorXd l1p = t.array() + 1.0;
      simd::log(as_span(l1p), as_span(l1p));
      const double softplus_sum = eta.cwiseMax(0.0).sum() + simd::sum(as_span(l1p));
      if (grad_eta) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double sig = eta(i) >= 0.0 ? 1.0 / (1.0 + t(i)) : t(i) / (1.0 + t(i));
          (*grad_eta)(i) = Z(i) - sig;
        }
      }
      return simd::dot(as_span(Z), as_span(eta)) - softplus_sum;
    }
    case Family::negbin: {
      const double u = gamma_t;
      const double kappa = std::exp(u);
      // L_i = log(kappa + mu_i) computed as logaddexp(u, eta_i).
      Eigen::VectorXd t(n);
      for (Eigen::Index i = 0; i < n; ++i) t(i) = -std::abs(u - eta(i));
      simd::exp(as_span(t), as_span(t));
      Eigen::VectorXd L = t.array() + 1.0;
      simd::log(as_span(L), as_span(L));
      for (Eigen::Index i = 0; i < n; ++i) L(i) += std::max(u, eta(i));

      double lg_sum = 0.0;
      for (std::size_t v = 0; v < k.unique_values.size(); ++v) {
        lg_sum += k.unique_counts[v] * std::lgamma(k.unique_values[v] + kappa);
      }
      Eigen::VectorXd zk = Z.array() + kappa;
      const double ll = lg_sum - dn * std::lgamma(kappa) - k.log_factorial_sum +
                        simd::dot(as_span(Z), as_span(eta)) - simd::dot(as_span(zk), as_span(L)) +
                        dn * kappa * u;
      if (grad_eta || grad_gamma) {
        // w_i = mu_i / (kappa + mu_i)
        Eigen::VectorXd w = eta - L;
        simd::exp(as_span(w), as_span(w));
        if (grad_eta) *grad_eta = Z - zk.cwiseProduct(w);
        if (grad_gamma) {
          double dg_sum = 0.0;
          for (std::size_t v = 0; v < k.unique_values.size(); ++v) {
            dg_sum += k.unique_counts[v] * digamma(k.unique_values[v] + kappa);
          }
          // (z + kappa) / (kappa + mu) = (z + kappa) (1 - w) / kappa
          const double ratio_sum = (zk.sum() - zk.dot(w)) / kappa;
          *grad_gamma = kappa * (dg_sum - dn * digamma(kappa) + dn * u + dn - simd::sum(as_span(L)) - ratio_sum);
        }
      }
      return ll;
    }
    case Family::gamma: {
      const double u = gamma_t;
      const double alpha = std::exp(u);
      Eigen::VectorXd e = -eta;
      simd::exp(as_span(e), as_span(e));
      const double zr = simd::dot(as_span(Z), as_span(e));  // sum z exp(-eta)
      const double eta_sum = simd::sum(as_span(eta));
      const double ll = dn * alpha * u - alpha * eta_sum - dn * std::lgamma(alpha) +
                        (alpha - 1.0) * k.log_z_sum - alpha * zr;
      if (grad_eta) *grad_eta = (alpha * Z.cwiseProduct(e)).array() - alpha;
      if (grad_gamma) {
        *grad_gamma = alpha * (dn * u + dn - eta_sum - dn * digamma(alpha) + k.log_z_sum - zr);
      }
      return ll;
    }
  }
  return 0.0;
}

}  // namespace

PriorSpec PriorSpec::defaults(std::size_t p) {
  PriorSpec s;
  s.beta_mean.assign(p, 0.0);
  s.beta_var.assign(p, 100.0);
  return s;
}

void PriorSpec::validate(std::size_t p) const {
  if (beta_mean.size() != p || beta_var.size() != p) {
    throw std::invalid_argument("priors: beta_mean/beta_var length must equal the covariate count");
  }
  const bool ok = std::all_of(beta_var.begin(), beta_var.end(), [](double v) { return v > 0.0; }) &&
                  sigma_var > 0.0 && tau_var > 0.0 && kappa_shape > 0.0 && kappa_rate > 0.0 &&
                  alpha_var > 0.0;
  if (!ok) throw std::invalid_argument("priors: variances and shape/rate must be strictly positive");
}

ParameterLayout::ParameterLayout(Family family, std::size_t p, std::size_t m, const FixedParams& fixed)
    : family_(family), p_(p), m_(m) {
  std::size_t d = p + m;
  if (!fixed.log_sigma2) sigma_index_ = d++;
  if (has_extra_param(family) && !fixed.extra_t) extra_index_ = d++;
  dim_ = d;
}

std::vector<std::string> ParameterLayout::names() const {
  std::vector<std::string> out;
  out.reserve(dim_);
  for (std::size_t k = 0; k < p_; ++k) out.push_back("beta" + std::to_string(k + 1));
  for (std::size_t k = 0; k < m_; ++k) out.push_back("delta" + std::to_string(k + 1));
  if (sigma_index_) out.emplace_back("log_sigma2");
  if (extra_index_) out.emplace_back(extra_param_name(family_));
  return out;
}

Eigen::VectorXd pack(const ParameterParts& parts, const ParameterLayout& layout) {
  if (static_cast<std::size_t>(parts.beta.size()) != layout.p() ||
      static_cast<std::size_t>(parts.delta.size()) != layout.m() ||
      parts.log_sigma2.has_value() != layout.has_log_sigma2() ||
      parts.gamma_t.has_value() != layout.has_extra()) {
    throw std::invalid_argument("pack: parts do not match the parameter layout");
  }
  Eigen::VectorXd theta(static_cast<Eigen::Index>(layout.dim()));
  theta.segment(0, parts.beta.size()) = parts.beta;
  theta.segment(parts.beta.size(), parts.delta.size()) = parts.delta;
  if (layout.has_log_sigma2()) theta(static_cast<Eigen::Index>(layout.log_sigma2_index())) = *parts.log_sigma2;
  if (layout.has_extra()) theta(static_cast<Eigen::Index>(layout.extra_index())) = *parts.gamma_t;
  return theta;
}

ParameterParts unpack(const Eigen::VectorXd& theta, const ParameterLayout& layout) {
  if (static_cast<std::size_t>(theta.size()) != layout.dim()) {
    throw std::invalid_argument("unpack: theta has dimension " + std::to_string(theta.size()) +
                                ", layout expects " + std::to_string(layout.dim()));
  }
  ParameterParts parts;
  parts.beta = theta.segment(0, static_cast<Eigen::Index>(layout.p()));
  parts.delta = theta.segment(static_cast<Eigen::Index>(layout.p()), static_cast<Eigen::Index>(layout.m()));
  if (layout.has_log_sigma2()) parts.log_sigma2 = theta(static_cast<Eigen::Index>(layout.log_sigma2_index()));
  if (layout.has_extra()) parts.gamma_t = theta(static_cast<Eigen::Index>(layout.extra_index()));
  return parts;
}

ResponseConstants ResponseConstants::compute(Family family, const Eigen::VectorXd& Z) {
  ResponseConstants k;
  if (family == Family::poisson || family == Family::negbin) {
    std::map<double, double> counts;
    for (Eigen::Index i = 0; i < Z.size(); ++i) {
      k.log_factorial_sum += std::lgamma(Z(i) + 1.0);
      counts[Z(i)] += 1.0;
    }
    for (const auto& [v, c] : counts) {
      k.unique_values.push_back(v);
      k.unique_counts.push_back(c);
    }
  }
  if (family == Family::gamma) {
    for (Eigen::Index i = 0; i < Z.size(); ++i) k.log_z_sum += std::log(Z(i));
  }
  return k;
}

ModelSpec::ModelSpec(Family family, PriorSpec priors, Eigen::MatrixXd X, Eigen::VectorXd Z,
                     Eigen::MatrixXd phi, Eigen::VectorXd prior_cov_diag, FixedParams fixed)
    : family_(family),
      priors_(std::move(priors)),
      fixed_(fixed),
      X_(std::move(X)),
      Z_(std::move(Z)),
      phi_(std::move(phi)),
      prior_cov_diag_(std::move(prior_cov_diag)) {
  if (X_.rows() != Z_.size() || phi_.rows() != Z_.size()) {
    throw std::invalid_argument("ModelSpec: covariate/basis row counts must equal the response count");
  }
  if (prior_cov_diag_.size() != phi_.cols()) {
    throw std::invalid_argument("ModelSpec: prior covariance diagonal length must equal m");
  }
  if ((prior_cov_diag_.array() <= 0.0).any()) {
    throw std::invalid_argument("ModelSpec: prior covariance diagonal must be positive");
  }
  priors_.validate(static_cast<std::size_t>(X_.cols()));
  for (Eigen::Index i = 0; i < Z_.size(); ++i) {
    if (!in_support(family_, Z_(i))) {
      std::ostringstream msg;
      msg << "response " << Z_(i) << " at training row " << i << " outside the " << to_string(family_)
          << " support";
      throw DataError(msg.str());
    }
  }
  layout_ = ParameterLayout(family_, static_cast<std::size_t>(X_.cols()),
                            static_cast<std::size_t>(phi_.cols()), fixed_);
  constants_ = ResponseConstants::compute(family_, Z_);
}

ModelSpec ModelSpec::from_dataset(const SpatialDataset& dataset, const BasisSystem& basis,
                                  PriorSpec priors, FixedParams fixed) {
  if (basis.rows() != static_cast<Eigen::Index>(dataset.size())) {
    throw std::invalid_argument("ModelSpec: basis must be built over all dataset locations");
  }
  return ModelSpec(dataset.family, std::move(priors), select_rows(dataset.X, dataset.train_idx),
                   select_rows(dataset.Z, dataset.train_idx), select_rows(basis.phi, dataset.train_idx),
                   basis.prior_cov_diagonal(), fixed);
}

double ModelSpec::log_sigma2(const Eigen::VectorXd& theta) const {
  if (fixed_.log_sigma2) return *fixed_.log_sigma2;
  return theta(static_cast<Eigen::Index>(layout_.log_sigma2_index()));
}

double ModelSpec::extra_t(const Eigen::VectorXd& theta) const {
  if (!has_extra_param(family_)) return 0.0;
  if (fixed_.extra_t) return *fixed_.extra_t;
  return theta(static_cast<Eigen::Index>(layout_.extra_index()));
}

Eigen::VectorXd ModelSpec::prior_center() const {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  for (std::size_t k = 0; k < layout_.p(); ++k) theta(static_cast<Eigen::Index>(k)) = priors_.beta_mean[k];
  if (layout_.has_log_sigma2()) theta(static_cast<Eigen::Index>(layout_.log_sigma2_index())) = priors_.sigma_mean;
  if (layout_.has_extra()) {
    double g = 0.0;
    switch (family_) {
      case Family::gaussian: g = priors_.tau_mean; break;
      case Family::negbin: g = std::log(priors_.kappa_shape / priors_.kappa_rate); break;
      case Family::gamma: g = priors_.alpha_mean; break;
      default: break;
    }
    theta(static_cast<Eigen::Index>(layout_.extra_index())) = g;
  }
  return theta;
}

Eigen::VectorXd linear_predictor(const Eigen::VectorXd& theta, const ModelSpec& spec) {
  if (static_cast<std::size_t>(theta.size()) != spec.dim()) {
    throw std::invalid_argument("linear_predictor: theta dimension mismatch");
  }
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.n()));
  const auto p = static_cast<Eigen::Index>(spec.layout().p());
  const auto m = static_cast<Eigen::Index>(spec.layout().m());
  for (Eigen::Index k = 0; k < p; ++k) simd::axpy(theta(k), column(spec.X(), k), as_span(eta));
  for (Eigen::Index k = 0; k < m; ++k) simd::axpy(theta(p + k), column(spec.phi(), k), as_span(eta));
  return eta;
}

double log_likelihood(Family family, const Eigen::VectorXd& Z, const Eigen::VectorXd& eta, double gamma_t) {
  if (Z.size() != eta.size()) throw std::invalid_argument("log_likelihood: Z and eta differ in length");
  for (Eigen::Index i = 0; i < Z.size(); ++i) {
    if (!in_support(family, Z(i))) {
      std::ostringstream msg;
      msg << "response " << Z(i) << " at index " << i << " outside the " << to_string(family) << " support";
      throw DataError(msg.str());
    }
  }
  return family_loglik(family, Z, eta, gamma_t, ResponseConstants::compute(family, Z), nullptr, nullptr);
}

double log_likelihood(const ModelSpec& spec, const Eigen::VectorXd& eta, double gamma_t,
                      Eigen::VectorXd* grad_eta, double* grad_gamma) {
  return family_loglik(spec.family(), spec.Z(), eta, gamma_t, spec.constants(), grad_eta, grad_gamma);
}

namespace {

// Prior terms; gradient accumulated into `grad` when non-null.
double log_prior_impl(const Eigen::VectorXd& theta, const ModelSpec& spec, Eigen::VectorXd* grad) {
  const auto& layout = spec.layout();
  const auto& pr = spec.priors();
  const auto p = static_cast<Eigen::Index>(layout.p());
  const auto m = static_cast<Eigen::Index>(layout.m());
  double lp = 0.0;

  for (Eigen::Index k = 0; k < p; ++k) {
    const double mean = pr.beta_mean[static_cast<std::size_t>(k)];
    const double var = pr.beta_var[static_cast<std::size_t>(k)];
    lp += normal_logpdf(theta(k), mean, var);
    if (grad) (*grad)(k) += -(theta(k) - mean) / var;
  }

  const double s = spec.log_sigma2(theta);
  const double inv_sigma2 = std::exp(-s);
  const auto& lam = spec.prior_cov_diag();
  double quad = 0.0;
  double logdet = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double d = theta(p + k);
    quad += d * d / lam(k);
    logdet += std::log(lam(k));
    if (grad) (*grad)(p + k) += -d * inv_sigma2 / lam(k);
  }
  const double dm = static_cast<double>(m);
  lp += -0.5 * dm * (kLog2Pi + s) - 0.5 * logdet - 0.5 * quad * inv_sigma2;

  if (layout.has_log_sigma2()) {
    const auto idx = static_cast<Eigen::Index>(layout.log_sigma2_index());
    lp += normal_logpdf(s, pr.sigma_mean, pr.sigma_var);
    if (grad) (*grad)(idx) += -0.5 * dm + 0.5 * quad * inv_sigma2 - (s - pr.sigma_mean) / pr.sigma_var;
  }

  if (layout.has_extra()) {
    const auto idx = static_cast<Eigen::Index>(layout.extra_index());
    const double g = theta(idx);
    switch (spec.family()) {
      case Family::gaussian:
        lp += normal_logpdf(g, pr.tau_mean, pr.tau_var);
        if (grad) (*grad)(idx) += -(g - pr.tau_mean) / pr.tau_var;
        break;
      case Family::negbin: {
        // Gamma(a, b) density on kappa = e^g times the Jacobian e^g.
        const double a = pr.kappa_shape;
        const double b = pr.kappa_rate;
        const double kappa = std::exp(g);
        lp += a * std::log(b) - std::lgamma(a) + a * g - b * kappa;
        if (grad) (*grad)(idx) += a - b * kappa;
        break;
      }
      case Family::gamma:
        lp += normal_logpdf(g, pr.alpha_mean, pr.alpha_var);
        if (grad) (*grad)(idx) += -(g - pr.alpha_mean) / pr.alpha_var;
        break;
      default:
        break;
    }
  }
  return lp;
}

void check_dim(const Eigen::VectorXd& theta, const ModelSpec& spec) {
  if (static_cast<std::size_t>(theta.size()) != spec.dim()) {
    throw std::invalid_argument("theta has dimension " + std::to_string(theta.size()) + ", model expects " +
                                std::to_string(spec.dim()));
  }
}

}  // namespace

double log_prior(const Eigen::VectorXd& theta, const ModelSpec& spec) {
  check_dim(theta, spec);
  return log_prior_impl(theta, spec, nullptr);
}

double log_joint(const Eigen::VectorXd& theta, const ModelSpec& spec) {
  check_dim(theta, spec);
  const Eigen::VectorXd eta = linear_predictor(theta, spec);
  return log_likelihood(spec, eta, spec.extra_t(theta), nullptr, nullptr) + log_prior_impl(theta, spec, nullptr);
}

double log_joint_and_grad(const Eigen::VectorXd& theta, const ModelSpec& spec, Eigen::VectorXd& grad) {
  check_dim(theta, spec);
  grad.setZero(theta.size());
  const Eigen::VectorXd eta = linear_predictor(theta, spec);
  Eigen::VectorXd g_eta;
  double g_gamma = 0.0;
  const auto& layout = spec.layout();
  const double ll = log_likelihood(spec, eta, spec.extra_t(theta), &g_eta, layout.has_extra() ? &g_gamma : nullptr);
  const auto p = static_cast<Eigen::Index>(layout.p());
  const auto m = static_cast<Eigen::Index>(layout.m());
  if (spec.n() > 0) {
    for (Eigen::Index k = 0; k < p; ++k) grad(k) = simd::dot(column(spec.X(), k), as_span(g_eta));
    for (Eigen::Index k = 0; k < m; ++k) grad(p + k) = simd::dot(column(spec.phi(), k), as_span(g_eta));
  }
  if (layout.has_extra()) grad(static_cast<Eigen::Index>(layout.extra_index())) = g_gamma;
  return ll + log_prior_impl(theta, spec, &grad);
}

Eigen::VectorXd grad_log_joint(const Eigen::VectorXd& theta, const ModelSpec& spec) {
  Eigen::VectorXd grad;
  log_joint_and_grad(theta, spec, grad);
  return grad;
}

}  // namespace sglmm

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "sglmm/error.hpp"
#include "sglmm/mcmc.hpp"
#include "sglmm/rng.hpp"
#include "sglmm/simd.hpp"

namespace sglmm {

void MhConfig::validate() const {
  if (iters < 1) throw std::invalid_argument("mh: iters must be >= 1");
  if (burn_in < 0 || burn_in >= iters) throw std::invalid_argument("mh: need 0 <= burn_in < iters");
  if (thin < 1) throw std::invalid_argument("mh: thin must be >= 1");
  if (!(adapt_target > 0.0 && adapt_target < 1.0)) throw std::invalid_argument("mh: adapt_target must be in (0,1)");
  for (double s : init_step_sds) {
    if (!(s > 0.0)) throw std::invalid_argument("mh: proposal sds must be > 0");
  }
}

ChainOutput mh_fit(const ModelSpec& model, const MhConfig& cfg) {
  cfg.validate();
  const auto D = static_cast<Eigen::Index>(model.dim());
  if (!cfg.init_step_sds.empty() && static_cast<Eigen::Index>(cfg.init_step_sds.size()) != D) {
    throw std::invalid_argument("mh: init_step_sds length must equal the parameter dimension");
  }
  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  const auto& layout = model.layout();
  const auto p = static_cast<Eigen::Index>(layout.p());
  const auto m = static_cast<Eigen::Index>(layout.m());
  const auto n = static_cast<std::size_t>(model.n());

  Eigen::VectorXd log_sd(D);
  for (Eigen::Index i = 0; i < D; ++i) {
    log_sd(i) = std::log(cfg.init_step_sds.empty() ? 0.1 : cfg.init_step_sds[static_cast<std::size_t>(i)]);
  }

  Eigen::VectorXd theta = model.prior_center();
  Eigen::VectorXd eta = linear_predictor(theta, model);
  double ll = log_likelihood(model, eta, model.extra_t(theta), nullptr, nullptr);
  double lp = log_prior(theta, model);
  if (!std::isfinite(ll + lp)) throw NumericalError("mh: log joint is not finite at the initial point");

  const int kept = (cfg.iters - cfg.burn_in) / cfg.thin;
  ChainOutput out;
  out.samples.resize(kept, D);
  out.total_iterations = cfg.iters;
  Eigen::VectorXd eta_prop(eta.size());
  long accepted_post = 0;
  long proposed_post = 0;
  int row = 0;

  for (int t = 1; t <= cfg.iters; ++t) {
    const bool burning = t <= cfg.burn_in;
    if (t % 100 == 0) eta = linear_predictor(theta, model);
    for (Eigen::Index i = 0; i < D; ++i) {
      const double cur = theta(i);
      const double prop = cur + std::exp(log_sd(i)) * rng.normal();
      const double step = prop - cur;
      theta(i) = prop;

      double ll_prop = ll;
      const bool moves_eta = i < p + m;
      if (moves_eta) {
        const Eigen::MatrixXd& src = i < p ? model.X() : model.phi();
        const Eigen::Index col = i < p ? i : i - p;
        eta_prop = eta;
        simd::axpy(step, {src.data() + col * src.rows(), n}, {eta_prop.data(), n});
        ll_prop = log_likelihood(model, eta_prop, model.extra_t(theta), nullptr, nullptr);
      } else if (layout.has_extra() && static_cast<std::size_t>(i) == layout.extra_index()) {
        ll_prop = log_likelihood(model, eta, prop, nullptr, nullptr);
      }
      const double lp_prop = log_prior(theta, model);

      const double log_ratio = (ll_prop + lp_prop) - (ll + lp);
      const double log_u = std::log(rng.uniform());
      const bool accept = std::isfinite(log_ratio) && log_u < log_ratio;
      if (static_cast<int>(out.transitions.size()) < cfg.record_transitions) {
        out.transitions.push_back({static_cast<std::size_t>(i), cur, prop, ll + lp, ll_prop + lp_prop, log_u, accept});
      }
      if (accept) {
        ll = ll_prop;
        lp = lp_prop;
        if (moves_eta) eta.swap(eta_prop);
      } else {
        theta(i) = cur;
      }

      if (burning) {
        if (cfg.adapt) {
          const double alpha = std::isfinite(log_ratio) ? std::min(1.0, std::exp(log_ratio)) : 0.0;
          log_sd(i) += std::pow(static_cast<double>(t), -0.6) * (alpha - cfg.adapt_target);
        }
      } else {
        ++proposed_post;
        if (accept) ++accepted_post;
      }
    }
    if (!burning && (t - cfg.burn_in) % cfg.thin == 0 && row < kept) {
      out.samples.row(row++) = theta.transpose();
    }
  }

  out.walltime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.accept_rate = proposed_post > 0 ? static_cast<double>(accepted_post) / static_cast<double>(proposed_post) : 0.0;
  out.proposal_sds = log_sd.array().exp();
  out.ess = kept >= 10 ? ess(out.samples) : Eigen::VectorXd::Zero(D);
  return out;
}

}  // namespace sglmm

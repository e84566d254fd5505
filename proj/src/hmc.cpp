#include <chrono>
#include <limits>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sglmm/error.hpp"
#include "sglmm/mcmc.hpp"
#include "sglmm/rng.hpp"

namespace sglmm {

void HmcConfig::validate() const {
  if (iters < 1) throw std::invalid_argument("hmc: iters must be >= 1");
  if (warmup < 0 || warmup >= iters) throw std::invalid_argument("hmc: need 0 <= warmup < iters");
  if (leapfrog_steps < 1) throw std::invalid_argument("hmc: leapfrog_steps must be >= 1");
  if (!(init_step_size > 0.0)) throw std::invalid_argument("hmc: init_step_size must be > 0");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw std::invalid_argument("hmc: target_accept must be in (0,1)");
  for (double v : mass_diag) {
    if (!(v > 0.0)) throw std::invalid_argument("hmc: mass_diag entries must be > 0");
  }
}

double hamiltonian(const Eigen::VectorXd& theta, const Eigen::VectorXd& momentum, const ModelSpec& model,
                   const Eigen::VectorXd& inv_mass) {
  return -log_joint(theta, model) + 0.5 * momentum.cwiseProduct(inv_mass).dot(momentum);
}

bool leapfrog(Eigen::VectorXd& theta, Eigen::VectorXd& momentum, double step, int steps, const ModelSpec& model,
              const Eigen::VectorXd& inv_mass) {
  Eigen::VectorXd grad;
  log_joint_and_grad(theta, model, grad);
  for (int s = 0; s < steps; ++s) {
    momentum += 0.5 * step * grad;
    theta += step * inv_mass.cwiseProduct(momentum);
    const double lj = log_joint_and_grad(theta, model, grad);
    momentum += 0.5 * step * grad;
    if (!std::isfinite(lj) || !grad.allFinite()) return false;
  }
  return true;
}

namespace {

constexpr double kDivergenceThreshold = 1000.0;

// Step-size dual averaging (Nesterov / Hoffman-Gelman).
struct DualAveraging {
  double mu;
  double target;
  double gamma = 0.05;
  double t0 = 10.0;
  double kappa = 0.75;
  double h_bar = 0.0;
  double log_step = 0.0;
  double log_step_bar = 0.0;
  int m = 0;

  DualAveraging(double init_step, double target_) : mu(std::log(10.0 * init_step)), target(target_),
                                                    log_step(std::log(init_step)) {}

  void update(double accept_prob) {
    ++m;
    const double md = static_cast<double>(m);
    const double w = 1.0 / (md + t0);
    h_bar = (1.0 - w) * h_bar + w * (target - accept_prob);
    log_step = mu - std::sqrt(md) / gamma * h_bar;
    const double eta = std::pow(md, -kappa);
    log_step_bar = eta * log_step + (1.0 - eta) * log_step_bar;
  }
};

}  // namespace

ChainOutput hmc_fit(const ModelSpec& model, const HmcConfig& cfg) {
  cfg.validate();
  const auto D = static_cast<Eigen::Index>(model.dim());
  if (!cfg.mass_diag.empty() && static_cast<Eigen::Index>(cfg.mass_diag.size()) != D) {
    throw std::invalid_argument("hmc: mass_diag length must equal the parameter dimension");
  }
  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);

  Eigen::VectorXd mass = Eigen::VectorXd::Ones(D);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(cfg.mass_diag.size()); ++i) {
    mass(i) = cfg.mass_diag[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd inv_mass = mass.cwiseInverse();
  const Eigen::VectorXd mass_sd = mass.cwiseSqrt();

  Eigen::VectorXd theta = model.prior_center();
  double current_lj = log_joint(theta, model);
  if (!std::isfinite(current_lj)) throw NumericalError("hmc: log joint is not finite at the initial point");

  DualAveraging da(cfg.init_step_size, cfg.target_accept);
  double step = cfg.init_step_size;
  const int kept = cfg.iters - cfg.warmup;
  ChainOutput out;
  out.samples.resize(kept, D);
  out.total_iterations = cfg.iters;
  long accepted_post = 0;

  Eigen::VectorXd momentum(D);
  for (int t = 1; t <= cfg.iters; ++t) {
    for (Eigen::Index i = 0; i < D; ++i) momentum(i) = mass_sd(i) * rng.normal();
    const double h0 = -current_lj + 0.5 * momentum.cwiseProduct(inv_mass).dot(momentum);

    Eigen::VectorXd prop = theta;
    Eigen::VectorXd mom = momentum;
    // Post-warmup steps are jittered by +-10% so a fixed trajectory length
    // cannot lock onto a periodic orbit of the target.
    const double eps = t <= cfg.warmup ? step : step * (0.9 + 0.2 * rng.uniform());
    const bool finite = leapfrog(prop, mom, eps, cfg.leapfrog_steps, model, inv_mass);
    double prop_lj = finite ? log_joint(prop, model) : -std::numeric_limits<double>::infinity();
    const double h1 = -prop_lj + 0.5 * mom.cwiseProduct(inv_mass).dot(mom);
    const double dh = h1 - h0;

    double accept_prob = 0.0;
    const bool divergent = !finite || !std::isfinite(dh) || dh > kDivergenceThreshold;
    if (divergent) {
      ++out.divergences;
    } else {
      accept_prob = std::min(1.0, std::exp(-dh));
    }
    const bool accept = !divergent && rng.uniform() < accept_prob;
    if (accept) {
      theta = std::move(prop);
      current_lj = prop_lj;
    }

    if (t <= cfg.warmup) {
      da.update(accept_prob);
      step = std::exp(da.log_step);
      if (t == cfg.warmup) step = std::exp(da.log_step_bar);
    } else {
      if (accept) ++accepted_post;
      out.samples.row(t - cfg.warmup - 1) = theta.transpose();
    }

    if (t >= 100 && 2 * out.divergences > t) {
      std::ostringstream msg;
      msg << "hmc: " << out.divergences << " divergent trajectories in " << t
          << " iterations (step size " << step << "); aborting";
      throw NumericalError(msg.str());
    }
  }

  out.walltime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.step_size = step;
  out.accept_rate = kept > 0 ? static_cast<double>(accepted_post) / kept : 0.0;
  out.ess = kept >= 10 ? ess(out.samples) : Eigen::VectorXd::Zero(D);
  return out;
}

}  // namespace sglmm

#pragma once
// MCMC baselines targeting the same log joint as the variational fitter.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "sglmm/glmm.hpp"

namespace sglmm {

struct MhConfig {
  int iters = 100000;  // sweeps, burn-in included
  int burn_in = 20000;
  int thin = 10;
  std::vector<double> init_step_sds;  // empty: 0.1 for every coordinate
  bool adapt = true;
  double adapt_target = 0.234;
  // Keep the first N single-site transitions for auditing.
  int record_transitions = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct HmcConfig {
  int iters = 2000;  // warmup included
  int warmup = 500;
  int leapfrog_steps = 20;
  double init_step_size = 0.01;
  double target_accept = 0.8;
  std::vector<double> mass_diag;  // empty: identity
  std::uint64_t seed = 1;

  void validate() const;
};

struct MhTransition {
  std::size_t coordinate = 0;
  double current = 0.0;
  double proposal = 0.0;
  double log_target_current = 0.0;
  double log_target_proposal = 0.0;
  double log_u = 0.0;
  bool accepted = false;
};

struct ChainOutput {
  Eigen::MatrixXd samples;  // kept draws x D
  double accept_rate = 0.0;  // after burn-in / warmup
  double walltime_s = 0.0;
  Eigen::VectorXd ess;
  int total_iterations = 0;
  int divergences = 0;        // HMC only
  double step_size = 0.0;     // HMC only: adapted leapfrog step
  Eigen::VectorXd proposal_sds;  // MH only: adapted per-coordinate scales
  std::vector<MhTransition> transitions;
};

// Component-wise Gaussian random-walk Metropolis with Robbins-Monro
// log-scale adaptation during burn-in.
ChainOutput mh_fit(const ModelSpec& model, const MhConfig& cfg);

// Fixed-length leapfrog HMC with dual-averaged step size during warmup.
ChainOutput hmc_fit(const ModelSpec& model, const HmcConfig& cfg);

// L leapfrog steps in place; returns false if a non-finite value appears.
bool leapfrog(Eigen::VectorXd& theta, Eigen::VectorXd& momentum, double step, int steps, const ModelSpec& model,
              const Eigen::VectorXd& inv_mass);

// -log p(theta) + 0.5 p' M^{-1} p
double hamiltonian(const Eigen::VectorXd& theta, const Eigen::VectorXd& momentum, const ModelSpec& model,
                   const Eigen::VectorXd& inv_mass);

// Per-column effective sample size (Geyer initial monotone sequence),
// clamped to [1, rows].
Eigen::VectorXd ess(const Eigen::MatrixXd& samples);

// Per-column batch-means Monte Carlo standard error with floor(sqrt(N))
// draws per batch.
Eigen::VectorXd batch_means_se(const Eigen::MatrixXd& samples);

}  // namespace sglmm

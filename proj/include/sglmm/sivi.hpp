#pragma once
// Semi-implicit variational inference for basis-SGLMMs.
//
// The variational family is hierarchical: eps ~ N(0, I_noise), psi = T_phi(eps)
// through an MLP, and theta | psi ~ N(psi, diag(scales^2)). The marginal
// density of theta is intractable, so the entropy term is replaced by the
// (K+1)-sample estimate
//
//   log h(theta_j) ~ log (1/(K+1)) [ sum_k q(theta_j | psi^(k)) + q(theta_j | psi_j) ]
//
// which yields a lower bound on the ELBO that tightens as K grows.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sglmm/error.hpp"
#include "sglmm/glmm.hpp"
#include "sglmm/mlp.hpp"
#include "sglmm/rng.hpp"

namespace sglmm {

struct ConditionalScales {
  double beta = 0.05;
  double delta = 0.5;
  double log_sigma2 = 0.05;
  double gamma = 0.05;
};

struct SiviConfig {
  int J = 20;
  int K = 1000;
  int max_iters = 5000;
  double stop_eps = 1e-2;
  int stop_window = 50;
  int noise_dim = 10;
  std::vector<std::size_t> hidden{40, 60, 40};
  ConditionalScales cond_scales{};
  double lr = 1e-3;
  double clip_norm = 100.0;
  // When > 0, K_t grows linearly from 1 to K over this many iterations.
  int k_ramp_iters = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Per-coordinate standard deviations of q(theta | psi) for a layout.
Eigen::VectorXd scale_vector(const ConditionalScales& scales, const ParameterLayout& layout);

// psi = mlp(eps), eps ~ N(0, I).
Eigen::VectorXd sample_mixing(const MlpMixer& net, Rng& rng);
// theta = psi + scales * eps_tilde.
Eigen::VectorXd conditional_sample(const Eigen::VectorXd& psi, const Eigen::VectorXd& scales, Rng& rng);
double conditional_log_density(const Eigen::VectorXd& theta, const Eigen::VectorXd& psi,
                               const Eigen::VectorXd& scales);
// log of the average of q(theta | .) over psi_j and the bank.
double kplus1_log_marginal(const Eigen::VectorXd& theta, const Eigen::VectorXd& psi_j,
                           std::span<const Eigen::VectorXd> bank, const Eigen::VectorXd& scales);

// All randomness consumed by one surrogate evaluation, row-major.
struct NoiseBatch {
  std::size_t J = 0;
  std::size_t K = 0;
  std::size_t noise_dim = 0;
  std::size_t dim = 0;
  std::vector<double> bank;  // K x noise_dim
  std::vector<double> mix;   // J x noise_dim
  std::vector<double> cond;  // J x dim

  // Bank noise first, then per-sample mixing and conditional noise.
  static NoiseBatch draw(std::size_t J, std::size_t K, std::size_t noise_dim, std::size_t dim, Rng& rng);
};

struct SurrogateEstimate {
  double value = 0.0;
  std::vector<double> grad;  // d value / d phi, MlpMixer parameter layout
};

// Thrown when an estimate is not finite; carries the offending draw.
class NonFiniteObjective : public NumericalError {
 public:
  NonFiniteObjective(const std::string& what, Eigen::VectorXd theta)
      : NumericalError(what), theta_(std::move(theta)) {}
  const Eigen::VectorXd& theta() const { return theta_; }

 private:
  Eigen::VectorXd theta_;
};

// Reusable buffers for repeated surrogate evaluations.
class SurrogateWorkspace {
 public:
  // Deterministic in (net, scales, model, noise).
  SurrogateEstimate evaluate(const MlpMixer& net, const Eigen::VectorXd& scales, const ModelSpec& model,
                             const NoiseBatch& noise, bool with_grad = true);

 private:
  MlpBatch batch_;
  std::vector<double> inputs_;
  std::vector<double> upstream_;
  std::vector<double> logq_;
  std::vector<double> thetas_;
  std::vector<double> ent_;
};

SurrogateEstimate surrogate_elbo_and_grad(const MlpMixer& net, const SiviConfig& config, const ModelSpec& model,
                                          Rng& rng);

enum class StopReason { converged, max_iters, non_finite };
std::string_view to_string(StopReason r);

struct FitResult {
  MlpMixer net;
  std::vector<double> elbo_trace;
  std::vector<double> walltime_trace;  // cumulative seconds at each iteration
  int iters_run = 0;
  StopReason stop_reason = StopReason::max_iters;
  double walltime_s = 0.0;
  int clipped_steps = 0;
  Eigen::VectorXd scales;
};

// Relative change of the trailing stop_window mean against the window before
// it; nullopt until 2 * window values exist.
std::optional<double> trailing_relative_change(std::span<const double> trace, int window);

FitResult fit_sivi(const ModelSpec& model, const SiviConfig& config);

struct PosteriorDraws {
  Eigen::MatrixXd samples;  // S x D
  Family family = Family::gaussian;
  ParameterLayout layout;
};

PosteriorDraws draw_posterior(const FitResult& fit, const ModelSpec& model, int S, Rng& rng);

}  // namespace sglmm

#include "sglmm/sivi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sglmm/adam.hpp"
#include "sglmm/simd.hpp"

namespace sglmm {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

void SiviConfig::validate() const {
  if (J < 1) throw std::invalid_argument("sivi: J must be >= 1");
  if (K < 0) throw std::invalid_argument("sivi: K must be >= 0");
  if (max_iters < 1) throw std::invalid_argument("sivi: max_iters must be >= 1");
  if (!(stop_eps > 0.0)) throw std::invalid_argument("sivi: stop_eps must be > 0");
  if (stop_window < 1) throw std::invalid_argument("sivi: stop_window must be >= 1");
  if (noise_dim < 1) throw std::invalid_argument("sivi: noise_dim must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("sivi: lr must be > 0");
  const auto& s = cond_scales;
  if (!(s.beta > 0.0 && s.delta > 0.0 && s.log_sigma2 > 0.0 && s.gamma > 0.0)) {
    throw std::invalid_argument("sivi: conditional scales must be > 0");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("sivi: hidden layer sizes must be positive");
  }
}

Eigen::VectorXd scale_vector(const ConditionalScales& scales, const ParameterLayout& layout) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(layout.dim()));
  const auto p = static_cast<Eigen::Index>(layout.p());
  const auto m = static_cast<Eigen::Index>(layout.m());
  s.segment(0, p).setConstant(scales.beta);
  s.segment(p, m).setConstant(scales.delta);
  if (layout.has_log_sigma2()) s(static_cast<Eigen::Index>(layout.log_sigma2_index())) = scales.log_sigma2;
  if (layout.has_extra()) s(static_cast<Eigen::Index>(layout.extra_index())) = scales.gamma;
  return s;
}

Eigen::VectorXd sample_mixing(const MlpMixer& net, Rng& rng) {
  Eigen::VectorXd eps(static_cast<Eigen::Index>(net.input_dim()));
  rng.fill_normal({eps.data(), static_cast<std::size_t>(eps.size())});
  return mlp_forward(net, eps);
}

Eigen::VectorXd conditional_sample(const Eigen::VectorXd& psi, const Eigen::VectorXd& scales, Rng& rng) {
  if (psi.size() != scales.size()) throw std::invalid_argument("conditional_sample: dimension mismatch");
  Eigen::VectorXd theta(psi.size());
  for (Eigen::Index i = 0; i < psi.size(); ++i) theta(i) = psi(i) + scales(i) * rng.normal();
  return theta;
}

double conditional_log_density(const Eigen::VectorXd& theta, const Eigen::VectorXd& psi,
                               const Eigen::VectorXd& scales) {
  if (theta.size() != psi.size() || theta.size() != scales.size()) {
    throw std::invalid_argument("conditional_log_density: dimension mismatch");
  }
  if ((scales.array() <= 0.0).any()) throw std::invalid_argument("conditional_log_density: scales must be > 0");
  const Eigen::VectorXd inv_var = scales.array().square().inverse();
  const double log_norm = -0.5 * static_cast<double>(theta.size()) * kLog2Pi - scales.array().log().sum();
  return log_norm - 0.5 * simd::weighted_sq_dist(as_span(theta), as_span(psi), as_span(inv_var));
}

double kplus1_log_marginal(const Eigen::VectorXd& theta, const Eigen::VectorXd& psi_j,
                           std::span<const Eigen::VectorXd> bank, const Eigen::VectorXd& scales) {
  std::vector<double> l;
  l.reserve(bank.size() + 1);
  l.push_back(conditional_log_density(theta, psi_j, scales));
  for (const auto& psi : bank) l.push_back(conditional_log_density(theta, psi, scales));
  const double mx = *std::max_element(l.begin(), l.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : l) acc += std::exp(v - mx);
  return mx + std::log(acc) - std::log(static_cast<double>(l.size()));
}

NoiseBatch NoiseBatch::draw(std::size_t J, std::size_t K, std::size_t noise_dim, std::size_t dim, Rng& rng) {
  NoiseBatch nb;
  nb.J = J;
  nb.K = K;
  nb.noise_dim = noise_dim;
  nb.dim = dim;
  nb.bank.resize(K * noise_dim);
  nb.mix.resize(J * noise_dim);
  nb.cond.resize(J * dim);
  rng.fill_normal(nb.bank);
  rng.fill_normal(nb.mix);
  rng.fill_normal(nb.cond);
  return nb;
}

SurrogateEstimate SurrogateWorkspace::evaluate(const MlpMixer& net, const Eigen::VectorXd& scales,
                                               const ModelSpec& model, const NoiseBatch& noise, bool with_grad) {
  const std::size_t J = noise.J;
  const std::size_t K = noise.K;
  const std::size_t d_in = noise.noise_dim;
  const std::size_t D = noise.dim;
  if (net.input_dim() != d_in || net.output_dim() != D || model.dim() != D ||
      static_cast<std::size_t>(scales.size()) != D) {
    throw std::invalid_argument("surrogate: network, noise, scales and model dimensions disagree");
  }
  const std::size_t B = J + K;

  // Rows [0, J) are the per-sample psi_j, rows [J, J+K) the bank.
  inputs_.resize(B * d_in);
  std::copy(noise.mix.begin(), noise.mix.end(), inputs_.begin());
  std::copy(noise.bank.begin(), noise.bank.end(), inputs_.begin() + static_cast<std::ptrdiff_t>(J * d_in));
  batch_.forward(net, inputs_, B);
  const std::span<const double> psi = batch_.outputs();

  const Eigen::VectorXd inv_var = scales.array().square().inverse();
  const double log_norm = -0.5 * static_cast<double>(D) * kLog2Pi - scales.array().log().sum();
  const auto& kern = simd::active_kernels();

  thetas_.resize(J * D);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t i = 0; i < D; ++i) {
      thetas_[j * D + i] = psi[j * D + i] + scales(static_cast<Eigen::Index>(i)) * noise.cond[j * D + i];
    }
  }

  if (with_grad) upstream_.assign(B * D, 0.0);
  logq_.resize(K + 1);
  const double inv_J = 1.0 / static_cast<double>(J);
  const double log_kp1 = std::log(static_cast<double>(K + 1));
  double total = 0.0;
  Eigen::VectorXd theta(static_cast<Eigen::Index>(D));
  Eigen::VectorXd grad_lp;

  for (std::size_t j = 0; j < J; ++j) {
    const double* th = thetas_.data() + j * D;
    std::copy(th, th + D, theta.data());

    const double lp = with_grad ? log_joint_and_grad(theta, model, grad_lp) : log_joint(theta, model);

    // logq_[0] pairs theta_j with its own psi_j; logq_[k] with bank member k.
    logq_[0] = log_norm - 0.5 * kern.weighted_sq_dist(th, psi.data() + j * D, inv_var.data(), D);
    for (std::size_t k = 0; k < K; ++k) {
      logq_[k + 1] = log_norm - 0.5 * kern.weighted_sq_dist(th, psi.data() + (J + k) * D, inv_var.data(), D);
    }
    const double mx = *std::max_element(logq_.begin(), logq_.end());
    double acc = 0.0;
    for (double& v : logq_) {
      v = std::exp(v - mx);
      acc += v;
    }
    const double lse = mx + std::log(acc) - log_kp1;
    const double term = lp - lse;
    if (!std::isfinite(term)) {
      std::ostringstream msg;
      msg << "surrogate ELBO is not finite (log joint " << lp << ", log marginal " << lse << ")";
      throw NonFiniteObjective(msg.str(), theta);
    }
    total += term;

    if (with_grad) {
      // d/dpsi_j    = grad log p(theta_j) + sum_{k>=1} w_jk (theta_j - psi^(k)) / s^2
      // d/dpsi^(k) -= w_jk (theta_j - psi^(k)) / s^2
      // The 1/s^2 factor is applied once all pairs are accumulated.
      ent_.assign(D, 0.0);
      const double inv_acc = 1.0 / acc;
      for (std::size_t k = 0; k < K; ++k) {
        const double w = logq_[k + 1] * inv_acc;
        if (w == 0.0) continue;
        const double* pk = psi.data() + (J + k) * D;
        kern.axpy_diff(w * inv_J, th, pk, ent_.data(), D);
        kern.axpy_diff(-w * inv_J, th, pk, upstream_.data() + (J + k) * D, D);
      }
      double* up_j = upstream_.data() + j * D;
      for (std::size_t i = 0; i < D; ++i) {
        up_j[i] = inv_J * grad_lp(static_cast<Eigen::Index>(i)) + ent_[i] * inv_var(static_cast<Eigen::Index>(i));
      }
    }
  }

  SurrogateEstimate est;
  est.value = total * inv_J;
  if (with_grad) {
    for (std::size_t k = 0; k < K; ++k) {
      double* up = upstream_.data() + (J + k) * D;
      for (std::size_t i = 0; i < D; ++i) up[i] *= inv_var(static_cast<Eigen::Index>(i));
    }
    est.grad.assign(net.num_params(), 0.0);
    batch_.backward(net, upstream_, est.grad);
  }
  return est;
}

SurrogateEstimate surrogate_elbo_and_grad(const MlpMixer& net, const SiviConfig& config, const ModelSpec& model,
                                          Rng& rng) {
  const NoiseBatch noise = NoiseBatch::draw(static_cast<std::size_t>(config.J), static_cast<std::size_t>(config.K),
                                            net.input_dim(), model.dim(), rng);
  SurrogateWorkspace ws;
  return ws.evaluate(net, scale_vector(config.cond_scales, model.layout()), model, noise);
}

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::max_iters: return "max_iters";
    case StopReason::non_finite: return "non_finite";
  }
  return "?";
}

std::optional<double> trailing_relative_change(std::span<const double> trace, int window) {
  const auto w = static_cast<std::size_t>(window);
  if (window < 1 || trace.size() < 2 * w) return std::nullopt;
  const auto last = trace.subspan(trace.size() - w, w);
  const auto prior = trace.subspan(trace.size() - 2 * w, w);
  const double m_last = std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(w);
  const double m_prior = std::accumulate(prior.begin(), prior.end(), 0.0) / static_cast<double>(w);
  return std::abs(m_last - m_prior) / (std::abs(m_prior) + 1e-12);
}

FitResult fit_sivi(const ModelSpec& model, const SiviConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  Rng rng(config.seed);

  std::vector<std::size_t> dims;
  dims.push_back(static_cast<std::size_t>(config.noise_dim));
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(model.dim());

  FitResult fit;
  fit.net = mlp_init(dims, rng);
  fit.scales = scale_vector(config.cond_scales, model.layout());
  AdamState adam(fit.net.num_params(), config.lr);
  adam.clip_norm = config.clip_norm;

  SurrogateWorkspace ws;
  int consecutive_bad = 0;
  fit.stop_reason = StopReason::max_iters;
  for (int t = 1; t <= config.max_iters; ++t) {
    int k_t = config.K;
    if (config.k_ramp_iters > 0 && t < config.k_ramp_iters) {
      k_t = std::max(1, static_cast<int>(std::ceil(static_cast<double>(config.K) * t / config.k_ramp_iters)));
      k_t = std::min(k_t, config.K);
    }
    const NoiseBatch noise = NoiseBatch::draw(static_cast<std::size_t>(config.J), static_cast<std::size_t>(k_t),
                                              fit.net.input_dim(), model.dim(), rng);
    double value = std::numeric_limits<double>::quiet_NaN();
    try {
      SurrogateEstimate est = ws.evaluate(fit.net, fit.scales, model, noise);
      value = est.value;
      const AdamStepInfo info = adam_step(adam, fit.net.params(), est.grad);
      if (info.clipped) ++fit.clipped_steps;
      consecutive_bad = 0;
    } catch (const NumericalError&) {
      ++consecutive_bad;
    }
    fit.elbo_trace.push_back(value);
    fit.walltime_trace.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    fit.iters_run = t;
    if (consecutive_bad >= 3) {
      fit.stop_reason = StopReason::non_finite;
      break;
    }
    if (const auto rel = trailing_relative_change(fit.elbo_trace, config.stop_window); rel && *rel < config.stop_eps) {
      fit.stop_reason = StopReason::converged;
      break;
    }
  }
  fit.walltime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return fit;
}

PosteriorDraws draw_posterior(const FitResult& fit, const ModelSpec& model, int S, Rng& rng) {
  if (S < 1) throw std::invalid_argument("draw_posterior: S must be >= 1");
  const std::size_t D = model.dim();
  if (fit.net.output_dim() != D || static_cast<std::size_t>(fit.scales.size()) != D) {
    throw std::invalid_argument("draw_posterior: fit does not match the model dimension");
  }
  PosteriorDraws draws;
  draws.family = model.family();
  draws.layout = model.layout();
  draws.samples.resize(S, static_cast<Eigen::Index>(D));
  for (int s = 0; s < S; ++s) {
    const Eigen::VectorXd psi = sample_mixing(fit.net, rng);
    draws.samples.row(s) = conditional_sample(psi, fit.scales, rng).transpose();
  }
  return draws;
}

}  // namespace sglmm

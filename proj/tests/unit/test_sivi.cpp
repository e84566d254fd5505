#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "sglmm/sivi.hpp"

namespace sglmm {
namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

double normal_logpdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
}

// beta ~ N(mean, var), no data, no basis: a one-dimensional prior-only target.
ModelSpec scalar_prior_model(double mean, double var) {
  PriorSpec pr = PriorSpec::defaults(1);
  pr.beta_mean = {mean};
  pr.beta_var = {var};
  FixedParams f;
  f.log_sigma2 = 0.0;
  return ModelSpec(Family::poisson, pr, Eigen::MatrixXd::Zero(0, 1), Eigen::VectorXd(0), Eigen::MatrixXd::Zero(0, 0),
                   Eigen::VectorXd(0), f);
}

// Known-variance normal mean: Z_i ~ N(beta, 1), beta ~ N(0, 100).
struct Conjugate {
  ModelSpec model;
  double post_mean;
  double post_sd;
};

Conjugate conjugate_model(int n, double truth, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd Z(n);
  for (int i = 0; i < n; ++i) Z(i) = truth + rng.normal();
  FixedParams f;
  f.log_sigma2 = 0.0;
  f.extra_t = 0.0;
  ModelSpec m(Family::gaussian, PriorSpec::defaults(1), Eigen::MatrixXd::Ones(n, 1), Z, Eigen::MatrixXd::Zero(n, 0),
              Eigen::VectorXd(0), f);
  const double prec = n + 1.0 / 100.0;
  return {std::move(m), Z.sum() / prec, std::sqrt(1.0 / prec)};
}

TEST(SampleMixing, ZeroWeightsGiveOutputBias) {
  MlpMixer net({3, 4, 2});
  net.bias(1)[0] = 1.5;
  net.bias(1)[1] = -0.25;
  Rng rng(1);
  const auto psi = sample_mixing(net, rng);
  EXPECT_EQ(psi(0), 1.5);
  EXPECT_EQ(psi(1), -0.25);
}

TEST(SampleMixing, DeterministicAndCentred) {
  Rng init(2);
  const auto net = mlp_init({4, 3}, init);
  Rng a(5), b(5);
  EXPECT_TRUE(sample_mixing(net, a) == sample_mixing(net, b));
  Rng rng(6);
  const int R = 10000;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(3);
  for (int r = 0; r < R; ++r) acc += sample_mixing(net, rng);
  acc /= R;
  for (int i = 0; i < 3; ++i) {
    double var = 0;
    for (double w : std::span(net.weights(0)).subspan(static_cast<std::size_t>(i) * 4, 4)) var += w * w;
    EXPECT_LT(std::abs(acc(i)), 3 * std::sqrt(var / R));
  }
}

TEST(ConditionalSample, Limits) {
  const Eigen::VectorXd psi = Eigen::Vector3d(0.5, -1.0, 2.0);
  Rng rng(3);
  const auto t = conditional_sample(psi, Eigen::VectorXd::Constant(3, 1e-300), rng);
  EXPECT_LT((t - psi).cwiseAbs().maxCoeff(), 1e-290);

  const Eigen::VectorXd s = Eigen::Vector3d(0.1, 1.0, 3.0);
  Rng r2(4);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sq = Eigen::VectorXd::Zero(3);
  const int R = 10000;
  for (int i = 0; i < R; ++i) {
    const Eigen::VectorXd d = conditional_sample(psi, s, r2) - psi;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  for (int i = 0; i < 3; ++i) {
    const double m = sum(i) / R;
    const double sd = std::sqrt(sq(i) / R - m * m);
    EXPECT_NEAR(sd / s(i), 1.0, 0.05);
  }
}

TEST(ConditionalLogDensity, Values) {
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(1), one = Eigen::VectorXd::Ones(1);
  EXPECT_NEAR(conditional_log_density(z, z, one), -0.9189385, 1e-7);
  EXPECT_NEAR(conditional_log_density(one, z, one), -kHalfLog2Pi - 0.5, 1e-14);
  Rng rng(7);
  Eigen::VectorXd t(6), p(6), s(6);
  double expect = 0;
  for (int i = 0; i < 6; ++i) {
    t(i) = rng.normal();
    p(i) = rng.normal();
    s(i) = 0.1 + rng.uniform();
    expect += normal_logpdf(t(i), p(i), s(i));
  }
  EXPECT_NEAR(conditional_log_density(t, p, s), expect, 1e-13);
  s(2) = 0.0;
  EXPECT_THROW(conditional_log_density(t, p, s), std::invalid_argument);
}

TEST(KPlusOne, Cases) {
  Rng rng(8);
  Eigen::VectorXd t(4), pj(4), s = Eigen::VectorXd::Constant(4, 0.7);
  for (int i = 0; i < 4; ++i) {
    t(i) = rng.normal();
    pj(i) = rng.normal();
  }
  EXPECT_EQ(kplus1_log_marginal(t, pj, {}, s), conditional_log_density(t, pj, s));
  const std::vector<Eigen::VectorXd> same(5, pj);
  EXPECT_NEAR(kplus1_log_marginal(t, pj, same, s), conditional_log_density(t, pj, s), 1e-13);

  std::vector<Eigen::VectorXd> bank(3, Eigen::VectorXd(4));
  for (auto& b : bank) {
    for (int i = 0; i < 4; ++i) b(i) = rng.normal();
  }
  long double acc = std::exp(static_cast<long double>(conditional_log_density(t, pj, s)));
  for (const auto& b : bank) acc += std::exp(static_cast<long double>(conditional_log_density(t, b, s)));
  EXPECT_NEAR(kplus1_log_marginal(t, pj, bank, s), static_cast<double>(std::log(acc / 4.0L)), 1e-12);
}

TEST(KPlusOne, LargeBankConsistency) {
  // psi ~ N(0, w^2) through a 1-D linear net; compare banks of 1e4 and 1e5.
  const double w = 0.8, s = 0.5, theta = 0.3;
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, theta), sc = Eigen::VectorXd::Constant(1, s);
  auto run = [&](int K, std::uint64_t seed, double& se) {
    Rng rng(seed);
    std::vector<Eigen::VectorXd> bank(static_cast<std::size_t>(K), Eigen::VectorXd(1));
    double sum = 0, sq = 0;
    for (auto& b : bank) {
      b(0) = w * rng.normal();
      const double q = std::exp(conditional_log_density(th, b, sc));
      sum += q;
      sq += q * q;
    }
    const double mean = sum / K;
    se = std::sqrt((sq / K - mean * mean) / K) / mean;  // delta method on the log
    const Eigen::VectorXd pj = Eigen::VectorXd::Constant(1, w * rng.normal());
    return kplus1_log_marginal(th, pj, bank, sc);
  };
  double se_small = 0, se_big = 0;
  const double small = run(10000, 1, se_small);
  const double big = run(100000, 2, se_big);
  EXPECT_LT(std::abs(small - big), 3 * std::hypot(se_small, se_big));
  EXPECT_LT(std::abs(big - normal_logpdf(theta, 0, std::hypot(w, s))), 3 * se_big + 1e-4);
}

TEST(Surrogate, PriorEqualsVariationalCancels) {
  const double mean = 0.7;
  const auto model = scalar_prior_model(mean, 1.0);
  MlpMixer net({4, 5, 1});
  net.bias(1)[0] = mean;
  SiviConfig cfg;
  cfg.J = 4000;
  cfg.K = 50;
  cfg.cond_scales.beta = 1.0;
  Rng rng(9);
  const auto est = surrogate_elbo_and_grad(net, cfg, model, rng);
  EXPECT_NEAR(est.value, 0.0, 1e-12);
  // Gradient is an average of J zero-mean terms of unit scale.
  for (double g : est.grad) EXPECT_LT(std::abs(g), 0.1);
}

TEST(Surrogate, FrozenNoiseFiniteDifferences) {
  Rng rng(10);
  Eigen::MatrixXd X(30, 2), phi(30, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = 0.3 * rng.normal();
  const Eigen::VectorXd eta = X.rowwise().sum();
  const Eigen::VectorXd Z = sample_responses(Family::negbin, eta, 2.0, rng);
  const ModelSpec model(Family::negbin, PriorSpec::defaults(2), X, Z, phi, Eigen::VectorXd::Ones(3));
  const std::size_t D = model.dim();
  auto net = mlp_init({6, 12, 9, D}, rng);
  const Eigen::VectorXd scales = scale_vector(ConditionalScales{0.1, 0.3, 0.1, 0.1}, model.layout());
  const NoiseBatch noise = NoiseBatch::draw(5, 20, 6, D, rng);
  SurrogateWorkspace ws;
  const auto est = ws.evaluate(net, scales, model, noise);
  const double h = 1e-5;
  for (int r = 0; r < 30; ++r) {
    const auto k = static_cast<std::size_t>(rng.next_u64() % net.num_params());
    MlpMixer a = net, b = net;
    a.params()[k] += h;
    b.params()[k] -= h;
    const double fd = (ws.evaluate(a, scales, model, noise, false).value -
                       ws.evaluate(b, scales, model, noise, false).value) / (2 * h);
    EXPECT_LT(std::abs(fd - est.grad[k]), 1e-4 * std::max(1.0, std::abs(est.grad[k])))
        << "param " << k << " fd " << fd << " analytic " << est.grad[k];
  }
}

TEST(Surrogate, BoundDirectionGaussianMixing) {
  // psi = w * eps + b, so q(theta) = N(b, w^2 + s^2) in closed form.
  const double mu = 1.0, v = 0.5, s = 0.4;
  const auto model = scalar_prior_model(mu, v);
  auto exact_elbo = [&](double b, double var_q) {
    // -KL(N(b, var_q) || N(mu, v))
    return -(0.5 * std::log(v / var_q) + (var_q + (b - mu) * (b - mu)) / (2 * v) - 0.5);
  };
  SiviConfig cfg;
  cfg.J = 20;
  cfg.K = 100;
  cfg.noise_dim = 1;
  cfg.cond_scales.beta = s;
  for (double w : {0.0, 0.5}) {
    MlpMixer net({1, 1});
    net.weights(0)[0] = w;
    net.bias(0)[0] = 0.8;
    Rng rng(11);
    const int R = 200;
    double sum = 0, sq = 0;
    for (int r = 0; r < R; ++r) {
      const double e = surrogate_elbo_and_grad(net, cfg, model, rng).value;
      sum += e;
      sq += e * e;
    }
    const double mean = sum / R;
    const double se = std::sqrt((sq / R - mean * mean) / R);
    const double exact = exact_elbo(0.8, w * w + s * s);
    EXPECT_LE(mean, exact + 3 * se) << "w=" << w;
    if (w == 0.0) EXPECT_NEAR(mean, exact, 3 * se);
  }
}

TEST(StopRule, TrailingChange) {
  std::vector<double> t(99, 1.0);
  EXPECT_FALSE(trailing_relative_change(t, 50).has_value());
  t.push_back(1.0);
  EXPECT_EQ(*trailing_relative_change(t, 50), 0.0);
  std::vector<double> u(50, -10.0);
  u.resize(100, -9.0);
  EXPECT_NEAR(*trailing_relative_change(u, 50), 0.1, 1e-12);
}

TEST(FitSivi, HugeEpsilonStopsAtFirstComparison) {
  const auto c = conjugate_model(20, 0.5, 1);
  SiviConfig cfg;
  cfg.K = 10;
  cfg.stop_eps = 1e300;
  const auto fit = fit_sivi(c.model, cfg);
  EXPECT_EQ(fit.iters_run, 2 * cfg.stop_window);
  EXPECT_EQ(fit.stop_reason, StopReason::converged);
  EXPECT_EQ(fit.elbo_trace.size(), static_cast<std::size_t>(fit.iters_run));
  EXPECT_EQ(fit.walltime_trace.size(), fit.elbo_trace.size());
}

TEST(FitSivi, Deterministic) {
  const auto c = conjugate_model(20, 0.5, 2);
  SiviConfig cfg;
  cfg.K = 50;
  cfg.max_iters = 30;
  const auto a = fit_sivi(c.model, cfg);
  const auto b = fit_sivi(c.model, cfg);
  EXPECT_EQ(a.elbo_trace, b.elbo_trace);
  EXPECT_TRUE(a.net == b.net);
  cfg.seed = 3;
  EXPECT_NE(fit_sivi(c.model, cfg).elbo_trace, a.elbo_trace);
}

TEST(FitSivi, ConjugateNormalMean) {
  const auto c = conjugate_model(100, 1.3, 4);
  SiviConfig cfg;
  cfg.max_iters = 3000;
  const auto fit = fit_sivi(c.model, cfg);
  EXPECT_EQ(fit.stop_reason, StopReason::converged);
  Rng rng(5);
  double acc = 0;
  const int R = 4000;
  for (int r = 0; r < R; ++r) acc += sample_mixing(fit.net, rng)(0);
  EXPECT_NEAR(acc / R, c.post_mean, 0.05);

  const auto& t = fit.elbo_trace;
  const std::size_t w = 50;
  const std::size_t early = std::max<std::size_t>(w, t.size() / 10);
  const double late_mean = std::accumulate(t.end() - w, t.end(), 0.0) / w;
  const double early_mean = std::accumulate(t.begin() + static_cast<long>(early - w), t.begin() + static_cast<long>(early), 0.0) / w;
  EXPECT_GE(late_mean, early_mean);
}

TEST(DrawPosterior, Compositional) {
  const auto c = conjugate_model(10, 0.0, 6);
  FitResult fit;
  Rng init(7);
  fit.net = mlp_init({10, 8, 1}, init);
  fit.scales = Eigen::VectorXd::Constant(1, 0.2);
  Rng a(8), b(8);
  const auto draws = draw_posterior(fit, c.model, 1, a);
  const auto expect = conditional_sample(sample_mixing(fit.net, b), fit.scales, b);
  EXPECT_EQ(draws.samples(0, 0), expect(0));
  EXPECT_EQ(draws.samples.cols(), static_cast<Eigen::Index>(c.model.dim()));
  EXPECT_EQ(draws.family, Family::gaussian);
}

TEST(DrawPosterior, ConstantNetSpread) {
  Rng rng(9);
  Eigen::MatrixXd X(20, 2), phi(20, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = rng.normal();
  const ModelSpec model(Family::negbin, PriorSpec::defaults(2), X, Eigen::VectorXd::Ones(20), phi,
                        Eigen::VectorXd::Ones(3));
  FitResult fit;
  fit.net = MlpMixer({10, 4, model.dim()});
  fit.scales = scale_vector(ConditionalScales{}, model.layout());
  const auto d = draw_posterior(fit, model, 50000, rng);
  ASSERT_EQ(d.samples.cols(), 7);
  EXPECT_TRUE(d.samples.allFinite());
  for (Eigen::Index k = 0; k < 7; ++k) {
    const auto col = d.samples.col(k);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / (col.size() - 1));
    EXPECT_NEAR(sd / fit.scales(k), 1.0, 0.03) << k;
  }
}

TEST(SiviConfig, Validation) {
  SiviConfig c;
  EXPECT_NO_THROW(c.validate());
  c.J = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.cond_scales.delta = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.stop_eps = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace sglmm

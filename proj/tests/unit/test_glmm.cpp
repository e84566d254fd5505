#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sglmm/error.hpp"
#include "sglmm/glmm.hpp"

namespace sglmm {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Random problem with responses drawn from the family itself.
ModelSpec random_spec(Family family, std::size_t n, std::size_t p, std::size_t m, std::uint64_t seed,
                      FixedParams fixed = {}) {
  Rng rng(seed);
  Eigen::MatrixXd X(n, p), phi(n, m);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = rng.normal() / std::sqrt(double(n));
  Eigen::VectorXd eta = 0.3 * X.rowwise().sum();
  const double extra = family == Family::gaussian ? 0.5 : 2.0;
  Eigen::VectorXd Z = sample_responses(family, eta, extra, rng);
  return ModelSpec(family, PriorSpec::defaults(p), X, Z, phi, Eigen::VectorXd::Ones(m), fixed);
}

Eigen::VectorXd random_theta(const ModelSpec& spec, Rng& rng) {
  Eigen::VectorXd t(spec.dim());
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = 0.5 * rng.normal();
  return t;
}

// Independent scalar-loop reimplementation of the log joint.
double slow_log_joint(const Eigen::VectorXd& theta, const ModelSpec& s) {
  const auto& L = s.layout();
  const std::size_t p = L.p(), m = L.m();
  const double ls2 = s.log_sigma2(theta);
  const double g = s.extra_t(theta);
  double lp = 0.0;
  for (std::size_t i = 0; i < s.n(); ++i) {
    double eta = 0.0;
    for (std::size_t k = 0; k < p; ++k) eta += s.X()(i, k) * theta(k);
    for (std::size_t k = 0; k < m; ++k) eta += s.phi()(i, k) * theta(p + k);
    const double z = s.Z()(i);
    switch (s.family()) {
      case Family::gaussian: {
        const double t2 = std::exp(g);
        lp += -0.5 * std::log(2 * std::numbers::pi * t2) - (z - eta) * (z - eta) / (2 * t2);
        break;
      }
      case Family::poisson:
        lp += z * eta - std::exp(eta) - std::lgamma(z + 1);
        break;
      case Family::bernoulli: {
        const double pr = 1.0 / (1.0 + std::exp(-eta));
        lp += z * std::log(pr) + (1 - z) * std::log(1 - pr);
        break;
      }
      case Family::negbin: {
        const double k = std::exp(g), mu = std::exp(eta);
        lp += std::lgamma(z + k) - std::lgamma(k) - std::lgamma(z + 1) + k * std::log(k / (k + mu)) +
              z * std::log(mu / (k + mu));
        break;
      }
      case Family::gamma: {
        const double a = std::exp(g), mu = std::exp(eta);
        lp += a * std::log(a / mu) - std::lgamma(a) + (a - 1) * std::log(z) - a * z / mu;
        break;
      }
    }
  }
  const auto& pr = s.priors();
  for (std::size_t k = 0; k < p; ++k) {
    const double d = theta(k) - pr.beta_mean[k];
    lp += -0.5 * std::log(2 * std::numbers::pi * pr.beta_var[k]) - d * d / (2 * pr.beta_var[k]);
  }
  for (std::size_t k = 0; k < m; ++k) {
    const double v = std::exp(ls2) * s.prior_cov_diag()(k);
    lp += -0.5 * std::log(2 * std::numbers::pi * v) - theta(p + k) * theta(p + k) / (2 * v);
  }
  if (L.has_log_sigma2()) {
    const double d = ls2 - pr.sigma_mean;
    lp += -0.5 * std::log(2 * std::numbers::pi * pr.sigma_var) - d * d / (2 * pr.sigma_var);
  }
  if (L.has_extra()) {
    switch (s.family()) {
      case Family::gaussian:
        lp += -0.5 * std::log(2 * std::numbers::pi * pr.tau_var) - (g - pr.tau_mean) * (g - pr.tau_mean) / (2 * pr.tau_var);
        break;
      case Family::negbin: {
        const double a = pr.kappa_shape, b = pr.kappa_rate;
        lp += a * std::log(b) - std::lgamma(a) + a * g - b * std::exp(g);
        break;
      }
      case Family::gamma:
        lp += -0.5 * std::log(2 * std::numbers::pi * pr.alpha_var) -
              (g - pr.alpha_mean) * (g - pr.alpha_mean) / (2 * pr.alpha_var);
        break;
      default:
        break;
    }
  }
  return lp;
}

TEST(LogLikelihood, UnitCases) {
  EXPECT_NEAR(log_likelihood(Family::gaussian, vec({0}), vec({0}), 0.0), -0.9189385, 1e-7);
  EXPECT_NEAR(log_likelihood(Family::bernoulli, vec({1}), vec({0})), -0.6931472, 1e-7);
  EXPECT_NEAR(log_likelihood(Family::poisson, vec({0}), vec({0})), -1.0, 1e-12);
  EXPECT_NEAR(log_likelihood(Family::negbin, vec({3}), vec({std::log(2.0)}), 0.0), std::log(8.0 / 81.0), 1e-12);
  EXPECT_NEAR(log_likelihood(Family::gamma, vec({1}), vec({0}), 0.0), -1.0, 1e-12);
}

TEST(LogLikelihood, GammaShapeOneIsExponential) {
  for (double z : {0.1, 1.0, 4.0}) {
    for (double eta : {-1.0, 0.3, 2.0}) {
      const double mu = std::exp(eta);
      EXPECT_NEAR(log_likelihood(Family::gamma, vec({z}), vec({eta}), 0.0), -std::log(mu) - z / mu, 1e-12);
    }
  }
}

TEST(LogLikelihood, Additivity) {
  for (Family f : kAllFamilies) {
    const double z = f == Family::gaussian ? 0.7 : (f == Family::gamma ? 1.3 : 1.0);
    const double one = log_likelihood(f, vec({z}), vec({0.4}), 0.2);
    const double many = log_likelihood(f, Eigen::VectorXd::Constant(7, z), Eigen::VectorXd::Constant(7, 0.4), 0.2);
    EXPECT_NEAR(many, 7 * one, 1e-12) << to_string(f);
  }
}

TEST(LogLikelihood, NegbinPoissonLimit) {
  const auto Z = vec({0, 1, 3, 7, 2});
  const auto eta = vec({0.1, -0.5, 1.2, 1.9, 0.4});
  const double nb = log_likelihood(Family::negbin, Z, eta, std::log(1e6));
  const double po = log_likelihood(Family::poisson, Z, eta);
  EXPECT_LT(std::abs(nb - po), 1e-3);
}

TEST(LogLikelihood, Errors) {
  EXPECT_THROW(log_likelihood(Family::poisson, vec({-1}), vec({0})), DataError);
  EXPECT_THROW(log_likelihood(Family::bernoulli, vec({0.5}), vec({0})), DataError);
  EXPECT_THROW(log_likelihood(Family::gamma, vec({0}), vec({0}), 0.0), DataError);
  EXPECT_THROW(log_likelihood(Family::poisson, vec({1, 2}), vec({0})), std::invalid_argument);
}

TEST(LogLikelihood, BernoulliStableForLargeEta) {
  const double v = log_likelihood(Family::bernoulli, vec({0, 1}), vec({800, -800}));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -1600.0, 1e-9);
}

TEST(Layout, Dimensions) {
  EXPECT_EQ(ParameterLayout(Family::negbin, 2, 50).dim(), 54u);
  EXPECT_EQ(ParameterLayout(Family::poisson, 2, 50).dim(), 53u);
  EXPECT_EQ(ParameterLayout(Family::bernoulli, 3, 10).dim(), 14u);
  FixedParams f;
  f.log_sigma2 = 0.0;
  f.extra_t = 0.0;
  const ParameterLayout g(Family::gaussian, 2, 5, f);
  EXPECT_EQ(g.dim(), 7u);
  EXPECT_FALSE(g.has_log_sigma2());
  EXPECT_FALSE(g.has_extra());
  const auto names = ParameterLayout(Family::gamma, 1, 2).names();
  ASSERT_EQ(names.size(), 5u);
  EXPECT_EQ(names.back(), "log_alpha");
  EXPECT_EQ(names[3], "log_sigma2");
}

TEST(Layout, PackUnpackRoundTrip) {
  const ParameterLayout L(Family::negbin, 2, 3);
  ParameterParts parts{vec({0.1, -0.2}), vec({1.0 / 3.0, 2e-300, -7.0}), 0.123456789, -1.5};
  const auto theta = pack(parts, L);
  ASSERT_EQ(theta.size(), 7);
  EXPECT_EQ(theta(5), 0.123456789);
  EXPECT_TRUE(unpack(theta, L) == parts);
  const ParameterLayout P(Family::poisson, 2, 3);
  EXPECT_THROW(unpack(theta, P), std::invalid_argument);
  EXPECT_THROW(pack(parts, P), std::invalid_argument);
}

TEST(LinearPredictor, Cases) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(4, 2);
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 1);
  const ModelSpec s(Family::gaussian, PriorSpec::defaults(1), X, Eigen::VectorXd::Zero(4), phi,
                    Eigen::VectorXd::Ones(2));
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(s.dim());
  EXPECT_TRUE(linear_predictor(theta, s).isZero(0));
  theta(1) = 2.5;
  EXPECT_TRUE(linear_predictor(theta, s) == vec({2.5, 0, 0, 0}));
  EXPECT_THROW(linear_predictor(Eigen::VectorXd::Zero(2), s), std::invalid_argument);

  const auto r = random_spec(Family::poisson, 30, 3, 6, 4);
  Rng rng(1);
  const auto t = random_theta(r, rng);
  const auto eta = linear_predictor(t, r);
  for (int i = 0; i < 30; ++i) {
    double e = 0;
    for (int k = 0; k < 3; ++k) e += r.X()(i, k) * t(k);
    for (int k = 0; k < 6; ++k) e += r.phi()(i, k) * t(3 + k);
    EXPECT_NEAR(eta(i), e, 1e-13);
  }
}

TEST(LogPrior, ModeValues) {
  const ModelSpec s(Family::poisson, PriorSpec::defaults(2), Eigen::MatrixXd::Zero(1, 2), vec({0}),
                    Eigen::MatrixXd::Zero(1, 3), Eigen::VectorXd::Ones(3));
  ParameterParts parts{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3), 0.0, std::nullopt};
  const double lp = log_prior(pack(parts, s.layout()), s);
  const double beta_term = 2 * (-0.5 * std::log(200 * std::numbers::pi));
  const double delta_term = -1.5 * kLog2Pi;
  const double sigma_term = -0.5 * kLog2Pi - 0.5;  // log sigma^2 = 0 under N(1, 1)
  EXPECT_NEAR(lp, beta_term + delta_term + sigma_term, 1e-12);
}

TEST(LogPrior, KappaWithJacobian) {
  FixedParams f;
  f.log_sigma2 = 0.0;
  const ModelSpec s(Family::negbin, PriorSpec::defaults(1), Eigen::MatrixXd::Zero(1, 1), vec({0}),
                    Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1), f);
  // beta = 0, delta = 0, log kappa = 0.
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  const double rest = -0.5 * std::log(200 * std::numbers::pi) - 0.5 * kLog2Pi;
  EXPECT_NEAR(log_prior(theta, s) - rest, -1.0, 1e-12);
}

TEST(LogPrior, MaximizedAtBetaMean) {
  PriorSpec pr = PriorSpec::defaults(1);
  pr.beta_mean = {1.7};
  const ModelSpec s(Family::poisson, pr, Eigen::MatrixXd::Zero(1, 1), vec({0}), Eigen::MatrixXd::Zero(1, 1),
                    Eigen::VectorXd::Ones(1));
  Eigen::VectorXd t = Eigen::VectorXd::Zero(3);
  double best = -1e300, arg = 0;
  for (int i = -300; i <= 300; ++i) {
    t(0) = 1.7 + i * 0.01;
    const double v = log_prior(t, s);
    if (v > best) {
      best = v;
      arg = t(0);
    }
  }
  EXPECT_NEAR(arg, 1.7, 1e-12);
}

TEST(LogJoint, EqualsSumAndMatchesSlowPath) {
  for (Family f : kAllFamilies) {
    const auto s = random_spec(f, 40, 2, 5, 10 + static_cast<int>(f));
    Rng rng(20);
    for (int r = 0; r < 10; ++r) {
      const auto t = random_theta(s, rng);
      const double lj = log_joint(t, s);
      const double ll = log_likelihood(f, s.Z(), linear_predictor(t, s), s.extra_t(t));
      EXPECT_NEAR(lj, ll + log_prior(t, s), 1e-10 * (1 + std::abs(lj))) << to_string(f);
      EXPECT_NEAR(lj, slow_log_joint(t, s), 1e-10 * (1 + std::abs(lj))) << to_string(f);
      Eigen::VectorXd g;
      EXPECT_EQ(log_joint_and_grad(t, s, g), lj);
    }
  }
}

TEST(LogJoint, BetterFitScoresHigher) {
  Rng rng(2);
  Eigen::MatrixXd X(50, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
  const Eigen::Vector2d beta(1.0, -0.5);
  const ModelSpec s(Family::gaussian, PriorSpec::defaults(2), X, X * beta, Eigen::MatrixXd::Zero(50, 1),
                    Eigen::VectorXd::Ones(1));
  Eigen::VectorXd t = Eigen::VectorXd::Zero(s.dim());
  t.head(2) = beta;
  Eigen::VectorXd far = t;
  far.head(2).array() += 5.0;
  EXPECT_GT(log_joint(t, s), log_joint(far, s));
}

TEST(Gradient, ZeroResidualStationarity) {
  Rng rng(3);
  Eigen::MatrixXd X(30, 2), phi(30, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = rng.normal();
  Eigen::VectorXd t(6);
  t << 0.4, -0.3, 0.2, 0.1, 0.0, 0.0;
  const Eigen::VectorXd Z = X * t.head(2) + phi * t.segment(2, 2);
  const ModelSpec s(Family::gaussian, PriorSpec::defaults(2), X, Z, phi, Eigen::VectorXd::Ones(2));
  Eigen::VectorXd grad_eta;
  double gg = 0;
  log_likelihood(s, linear_predictor(t, s), 0.0, &grad_eta, &gg);
  EXPECT_LT((X.transpose() * grad_eta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gradient, PriorOnlyScore) {
  FixedParams f;
  f.log_sigma2 = 0.0;
  const ModelSpec s(Family::poisson, PriorSpec::defaults(2), Eigen::MatrixXd::Zero(0, 2), Eigen::VectorXd(0),
                    Eigen::MatrixXd::Zero(0, 3), Eigen::VectorXd::Ones(3), f);
  const Eigen::VectorXd t = vec({1.0, -2.0, 0.5, -0.25, 2.0});
  const auto g = grad_log_joint(t, s);
  EXPECT_NEAR(g(0), -1.0 / 100, 1e-14);
  EXPECT_NEAR(g(1), 2.0 / 100, 1e-14);
  for (int k = 2; k < 5; ++k) EXPECT_NEAR(g(k), -t(k), 1e-14);
}

TEST(Gradient, FiniteDifferencesAllFamilies) {
  for (Family f : kAllFamilies) {
    for (auto mode : {0, 1}) {
      FixedParams fx;
      if (mode == 1) fx.log_sigma2 = 0.3;
      const auto s = random_spec(f, 25, 2, 4, 50 + static_cast<int>(f), fx);
      Rng rng(77);
      for (int r = 0; r < 20; ++r) {
        Eigen::VectorXd t = random_theta(s, rng);
        const auto g = grad_log_joint(t, s);
        for (Eigen::Index k = 0; k < t.size(); ++k) {
          const double h = 1e-5;
          Eigen::VectorXd a = t, b = t;
          a(k) += h;
          b(k) -= h;
          const double fd = (log_joint(a, s) - log_joint(b, s)) / (2 * h);
          EXPECT_LT(std::abs(fd - g(k)), 1e-5 * std::max(1.0, std::abs(g(k))))
              << to_string(f) << " coord " << k << " fd " << fd << " an " << g(k);
        }
      }
    }
  }
}

TEST(ModelSpec, PriorCenter) {
  const auto s = random_spec(Family::negbin, 10, 2, 3, 1);
  const auto c = s.prior_center();
  EXPECT_TRUE(c.head(5).isZero(0));
  EXPECT_EQ(c(5), 1.0);
  EXPECT_NEAR(c(6), std::log(2.0), 1e-15);
}

TEST(PriorSpec, Validate) {
  PriorSpec p = PriorSpec::defaults(2);
  EXPECT_NO_THROW(p.validate(2));
  EXPECT_THROW(p.validate(3), std::invalid_argument);
  p.kappa_rate = 0.0;
  EXPECT_THROW(p.validate(2), std::invalid_argument);
}

}  // namespace
}  // namespace sglmm

namespace sglmm {

TEST(GlmmGrad, UnderflowedKappaIsNonFiniteNotThrow) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 1);
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(5, 0);
  Eigen::VectorXd Z(5);
  Z << 0, 1, 2, 3, 4;
  const ModelSpec model(Family::negbin, PriorSpec::defaults(1), X, Z, phi, Eigen::VectorXd(0));
  Eigen::VectorXd theta = model.prior_center();
  theta(theta.size() - 1) = -720.0;  // kappa is subnormal
  Eigen::VectorXd g;
  EXPECT_NO_THROW(log_joint_and_grad(theta, model, g));
  EXPECT_FALSE(g.allFinite() && std::isfinite(log_joint(theta, model)));
}

}  // namespace sglmm

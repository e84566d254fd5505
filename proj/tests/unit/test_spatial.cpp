#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sglmm/error.hpp"
#include "sglmm/spatial.hpp"

namespace sglmm {
namespace {

std::vector<Location2D> random_locations(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Location2D> locs(n);
  for (auto& l : locs) l = {rng.uniform(), rng.uniform()};
  return locs;
}

TEST(Matern, ZeroDistanceIsMarginalVariance) {
  for (double nu : {0.5, 1.5, 2.5, 0.8, 3.2}) {
    EXPECT_EQ(matern_kernel(0.0, {nu, 0.2, 2.7}), 2.7) << nu;
  }
}

TEST(Matern, ExponentialCase) {
  EXPECT_NEAR(matern_kernel(0.1, {0.5, 0.1, 1.0}), 0.3678794, 1e-7);
  for (int i = 0; i <= 200; ++i) {
    const double d = i * 0.01;
    EXPECT_NEAR(matern_kernel(d, {0.5, 0.3, 1.7}), 1.7 * std::exp(-d / 0.3), 1e-12);
  }
}

TEST(Matern, ThreeHalvesCase) {
  EXPECT_NEAR(matern_kernel(0.3, {1.5, 0.3, 1.0}), 0.4833578, 1e-7);
}

TEST(Matern, GeneralNuMatchesClosedFormsNearby) {
  // The Bessel branch is continuous in nu across the closed-form values.
  for (double d : {0.05, 0.2, 0.7}) {
    EXPECT_NEAR(matern_kernel(d, {1.5 + 1e-9, 0.3, 1.0}), matern_kernel(d, {1.5, 0.3, 1.0}), 1e-7);
    EXPECT_NEAR(matern_kernel(d, {2.5 - 1e-9, 0.3, 1.0}), matern_kernel(d, {2.5, 0.3, 1.0}), 1e-7);
  }
}

TEST(Matern, NonIncreasing) {
  for (double nu : {0.5, 1.5}) {
    double prev = matern_kernel(0.0, {nu, 0.1, 1.0});
    for (int i = 1; i <= 1000; ++i) {
      const double c = matern_kernel(i * 1e-3, {nu, 0.1, 1.0});
      EXPECT_LE(c, prev);
      prev = c;
    }
  }
}

TEST(Matern, RejectsBadDistance) {
  EXPECT_THROW(matern_kernel(-1.0, {}), std::domain_error);
  EXPECT_THROW(matern_kernel(std::nan(""), {}), std::domain_error);
}

TEST(Covariance, SingleLocation) {
  const std::vector<Location2D> one = {{0.3, 0.4}};
  const auto c = build_covariance(one, {0.5, 0.1, 2.0}, 0.25);
  ASSERT_EQ(c.size(), 1);
  EXPECT_EQ(c.entries(0, 0), 2.25);
}

TEST(Covariance, CoincidentLocationsWarn) {
  const std::vector<Location2D> two = {{0.5, 0.5}, {0.5, 0.5}};
  const auto c = build_covariance(two, {0.5, 0.1, 3.0}, 0.0);
  EXPECT_TRUE((c.entries.array() == 3.0).all());
  EXPECT_FALSE(c.warnings.empty());
}

TEST(Covariance, MatchesBruteForce) {
  const auto locs = random_locations(5, 3);
  const MaternParams mp{1.5, 0.2, 1.3};
  const auto c = build_covariance(locs, mp, 1e-6);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double d = std::hypot(locs[i].x - locs[j].x, locs[i].y - locs[j].y);
      EXPECT_NEAR(c.entries(i, j), matern_kernel(d, mp) + (i == j ? 1e-6 : 0.0), 1e-14);
    }
  }
}

TEST(Cholesky, RecoversWithExtraJitterOrThrows) {
  // Rank-one matrix: needs the retry jitter.
  const std::vector<Location2D> two = {{0.5, 0.5}, {0.5, 0.5}};
  const auto c = build_covariance(two, {0.5, 0.1, 1.0}, 0.0);
  const Eigen::MatrixXd L = cholesky_lower(c);
  EXPECT_NEAR((L * L.transpose() - c.entries).cwiseAbs().maxCoeff(), 0.0, 1e-6);

  CovarianceMatrix bad;
  bad.entries = Eigen::MatrixXd::Identity(2, 2);
  bad.entries(1, 1) = -1.0;
  EXPECT_THROW(cholesky_lower(bad), NumericalError);
}

TEST(SampleGp, IdentityReturnsRawNormals) {
  CovarianceMatrix c;
  c.entries = Eigen::MatrixXd::Identity(3, 3);
  Rng a(42), b(42);
  const auto v = sample_gp(c, a);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(v(i), b.normal());
}

TEST(SampleGp, Deterministic) {
  const auto c = build_covariance(random_locations(30, 1), {0.5, 0.1, 1.0}, 1e-8);
  Rng a(9), b(9);
  const Eigen::VectorXd x = sample_gp(c, a);
  const Eigen::VectorXd y = sample_gp(c, b);
  EXPECT_TRUE(x == y);
}

TEST(SampleGp, EmpiricalCorrelation) {
  CovarianceMatrix c;
  c.entries.resize(2, 2);
  c.entries << 1.0, 0.9, 0.9, 1.0;
  Rng rng(11);
  double sxy = 0, sxx = 0, syy = 0;
  for (int r = 0; r < 10000; ++r) {
    const auto v = sample_gp(c, rng);
    sxy += v(0) * v(1);
    sxx += v(0) * v(0);
    syy += v(1) * v(1);
  }
  EXPECT_NEAR(sxy / std::sqrt(sxx * syy), 0.9, 0.02);
}

TEST(SampleGp, SampleCovarianceThreeByThree) {
  CovarianceMatrix c;
  c.entries.resize(3, 3);
  c.entries << 2.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 0.5;
  Rng rng(12);
  const int R = 20000;
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  for (int r = 0; r < R; ++r) {
    const Eigen::Vector3d v = sample_gp(c, rng);
    acc += v * v.transpose();
  }
  acc /= R;
  const double tol = 3.0 * std::sqrt(2.0 / R);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      // Scale by the entry's natural spread sqrt(S_ii S_jj).
      const double scale = std::sqrt(c.entries(i, i) * c.entries(j, j));
      EXPECT_NEAR(acc(i, j), c.entries(i, j), tol * std::max(scale, 1.0)) << i << "," << j;
    }
  }
}

TEST(Eigenbasis, Identity) {
  CovarianceMatrix c;
  c.entries = Eigen::MatrixXd::Identity(3, 3);
  const auto b = leading_eigenbasis(c, 2);
  ASSERT_EQ(b.size(), 2);
  EXPECT_NEAR(b.eigenvalues(0), 1.0, 1e-12);
  EXPECT_NEAR(b.eigenvalues(1), 1.0, 1e-12);
  EXPECT_LT((b.phi.transpose() * b.phi - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Eigenbasis, RankOneDirection) {
  CovarianceMatrix c;
  c.entries = 1e-3 * Eigen::MatrixXd::Identity(3, 3);
  c.entries(0, 0) += 1.0;
  const auto b = leading_eigenbasis(c, 1);
  EXPECT_NEAR(std::abs(b.phi(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(b.phi(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(b.phi(2, 0), 0.0, 1e-12);
}

TEST(Eigenbasis, MatchesDenseSolver) {
  Rng rng(5);
  Eigen::MatrixXd A(20, 20);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  CovarianceMatrix c;
  c.entries = A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(20, 20);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.entries);
  double prev_err = std::numeric_limits<double>::infinity();
  for (int m = 1; m <= 20; ++m) {
    const auto b = leading_eigenbasis(c, m);
    for (int k = 0; k < m; ++k) {
      EXPECT_NEAR(b.eigenvalues(k), es.eigenvalues()(19 - k), 1e-8 * es.eigenvalues()(19));
      const double align = std::abs(b.phi.col(k).dot(es.eigenvectors().col(19 - k)));
      EXPECT_NEAR(align, 1.0, 1e-8);
      if (k > 0) EXPECT_LE(b.eigenvalues(k), b.eigenvalues(k - 1));
    }
    EXPECT_LT((b.phi.transpose() * b.phi - Eigen::MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff(), 1e-8);
    const double err = (c.entries - b.phi * b.eigenvalues.asDiagonal() * b.phi.transpose()).norm();
    EXPECT_LE(err, prev_err + 1e-9);
    prev_err = err;
  }
}

TEST(Eigenbasis, SignConventionAndModes) {
  const auto c = build_covariance(random_locations(40, 2), {0.5, 0.2, 1.0}, 1e-8);
  const auto b = leading_eigenbasis(c, 5, PriorCovMode::eigenvalue_diagonal);
  for (int k = 0; k < 5; ++k) {
    Eigen::Index idx;
    b.phi.col(k).cwiseAbs().maxCoeff(&idx);
    EXPECT_GT(b.phi(idx, k), 0.0);
  }
  EXPECT_TRUE(b.prior_cov_diagonal() == b.eigenvalues);
  const auto bi = leading_eigenbasis(c, 5);
  EXPECT_TRUE(bi.prior_cov_diagonal() == Eigen::VectorXd::Ones(5));
}

TEST(Eigenbasis, RejectsTooManyColumns) {
  CovarianceMatrix c;
  c.entries = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_THROW(leading_eigenbasis(c, 4), std::invalid_argument);
  EXPECT_THROW(leading_eigenbasis(c, 0), std::invalid_argument);
}

TEST(Simulate, PureFunctionOfScenario) {
  SyntheticScenario s;
  s.family = Family::negbin;
  s.n_train = 80;
  s.n_test = 20;
  s.extra_param_true = 2.0;
  s.seed = 17;
  const auto a = simulate_dataset(s);
  const auto b = simulate_dataset(s);
  EXPECT_TRUE(a.dataset.Z == b.dataset.Z);
  EXPECT_TRUE(a.dataset.X == b.dataset.X);
  EXPECT_TRUE(a.truth.omega == b.truth.omega);
  ASSERT_EQ(a.dataset.size(), 100u);
  EXPECT_EQ(a.dataset.train_idx.size(), 80u);
  EXPECT_EQ(a.dataset.test_idx.size(), 20u);
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    EXPECT_GE(a.dataset.locations[i].x, 0.0);
    EXPECT_LE(a.dataset.locations[i].x, 1.0);
    EXPECT_TRUE(in_support(Family::negbin, a.dataset.Z(static_cast<Eigen::Index>(i))));
  }
  EXPECT_LE(a.dataset.X.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Simulate, DegenerateNoiselessGaussian) {
  SyntheticScenario s;
  s.family = Family::gaussian;
  s.matern.marg_var = 1e-12;
  s.beta_true = {0.0, 0.0};
  s.extra_param_true = 1e-12;
  s.n_train = 50;
  s.n_test = 10;
  const auto r = simulate_dataset(s);
  EXPECT_LT(r.dataset.Z.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Simulate, BernoulliCoin) {
  Rng rng(3);
  const auto z = sample_responses(Family::bernoulli, Eigen::VectorXd::Zero(10000), 0.0, rng);
  const double mean = z.mean();
  EXPECT_GE(mean, 0.47);
  EXPECT_LE(mean, 0.53);
}

TEST(Simulate, PoissonMoment) {
  Rng rng(4);
  Eigen::VectorXd eta(10000);
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) = 1.0 * rng.uniform(-1, 1) + 1.0 * rng.uniform(-1, 1);
  const auto z = sample_responses(Family::poisson, eta, 0.0, rng);
  const double target = eta.array().exp().mean();
  EXPECT_NEAR(z.mean() / target, 1.0, 0.02);
}

TEST(Simulate, FamilyMoments) {
  Rng rng(8);
  const Eigen::VectorXd eta = Eigen::VectorXd::Constant(40000, std::log(3.0));
  const auto nb = sample_responses(Family::negbin, eta, 2.0, rng);
  EXPECT_NEAR(nb.mean(), 3.0, 0.06);
  EXPECT_NEAR((nb.array() - nb.mean()).square().mean(), 3.0 + 9.0 / 2.0, 0.3);
  const auto g = sample_responses(Family::gamma, eta, 2.0, rng);
  EXPECT_NEAR(g.mean(), 3.0, 0.05);
  EXPECT_NEAR((g.array() - g.mean()).square().mean(), 9.0 / 2.0, 0.25);
  const auto n = sample_responses(Family::gaussian, eta, 0.25, rng);
  EXPECT_NEAR((n.array() - n.mean()).square().mean(), 0.25, 0.01);
}

TEST(Dataset, ValidateRejectsBadSplits) {
  SpatialDataset ds;
  ds.family = Family::poisson;
  ds.locations = {{0, 0}, {1, 1}};
  ds.X = Eigen::MatrixXd::Zero(2, 1);
  ds.Z = Eigen::VectorXd::Zero(2);
  ds.train_idx = {0};
  ds.test_idx = {0};
  EXPECT_THROW(ds.validate(), DataError);
  ds.test_idx = {1};
  EXPECT_NO_THROW(ds.validate());
  ds.Z(1) = 1.5;
  EXPECT_THROW(ds.validate(), DataError);
}

TEST(Support, PerFamily) {
  EXPECT_TRUE(in_support(Family::gaussian, -3.2));
  EXPECT_TRUE(in_support(Family::bernoulli, 1.0));
  EXPECT_FALSE(in_support(Family::bernoulli, 2.0));
  EXPECT_FALSE(in_support(Family::poisson, -1.0));
  EXPECT_FALSE(in_support(Family::negbin, 0.5));
  EXPECT_FALSE(in_support(Family::gamma, 0.0));
  EXPECT_TRUE(in_support(Family::gamma, 0.1));
}

}  // namespace
}  // namespace sglmm

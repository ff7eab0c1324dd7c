#include <gtest/gtest.h>

#include <ratioflow/estimator.hpp>
#include <ratioflow/rng.hpp>

#include <cmath>
#include <limits>

using namespace ratioflow;

namespace {

Dataset random_dataset(Philox& rng, std::size_t n, const Eigen::VectorXd& theta, std::size_t sessions = 1) {
  const auto d = static_cast<std::size_t>(theta.size());
  Dataset data(d, sessions);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    x[0] = 1.0;
    for (std::size_t j = 1; j < d; ++j) x[j] = rng.uniform(-1.0, 1.0);
    const double r = ratio_pair(linear_predictor(theta, x)).ma;
    data.push(rng.uniform() < r ? OrderSide::MA : OrderSide::MB, x, static_cast<SessionId>(i % sessions));
  }
  return data;
}

Eigen::VectorXd random_theta(Philox& rng, Eigen::Index d, double scale) {
  Eigen::VectorXd t(d);
  for (Eigen::Index j = 0; j < d; ++j) t[j] = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST(Ratio, Examples) {
  EXPECT_EQ(ratio_pair(0.0).ma, 0.5);
  EXPECT_EQ(ratio_pair(0.0).mb, 0.5);
  EXPECT_NEAR(ratio_pair(std::log(3.0)).ma, 0.75, 1e-15);
  EXPECT_NEAR(ratio_pair(std::log(3.0)).mb, 0.25, 1e-15);
  const Theta th{Eigen::Vector2d(0.0, std::log(3.0))};
  const std::vector<double> x{1.0, 1.0};
  EXPECT_NEAR(ratio(th, x, OrderSide::MA), 0.75, 1e-15);
  EXPECT_THROW(ratio(th, std::vector<double>{1.0}, OrderSide::MA), Error);
}

TEST(Ratio, SumsToOneAndStableAtExtremes) {
  Philox rng(3);
  for (int i = 0; i < 100000; ++i) {
    const double z = rng.uniform(-700, 700);
    const auto r = ratio_pair(z);
    ASSERT_EQ(r.ma + r.mb, 1.0) << z;
    ASSERT_TRUE(std::isfinite(log_ratio(z, OrderSide::MA)));
  }
  EXPECT_EQ(ratio_pair(700).mb, 1.0 - ratio_pair(700).ma);
  EXPECT_NEAR(log_ratio(-700, OrderSide::MA), -700.0, 1e-12);
  EXPECT_EQ(ratio_pair(-3.0).ma, ratio_pair(3.0).mb);
}

TEST(Likelihood, Examples) {
  Dataset data(2, 1);
  for (int i = 0; i < 10; ++i) data.push(i % 3 ? OrderSide::MA : OrderSide::MB, std::vector<double>{1.0, 0.3 * i});
  EXPECT_NEAR(quasi_log_likelihood(Eigen::Vector2d::Zero(), data), 10 * std::log(0.5), 1e-12);

  Dataset one(1, 1);
  one.push(OrderSide::MA, std::vector<double>{1.0});
  EXPECT_NEAR(quasi_log_likelihood(Eigen::VectorXd::Constant(1, std::log(3.0)), one), std::log(0.75), 1e-15);

  EXPECT_THROW(quasi_log_likelihood(Eigen::VectorXd::Zero(1), Dataset(1, 1)), Error);
  EXPECT_THROW(quasi_log_likelihood(Eigen::VectorXd::Zero(3), data), Error);
}

TEST(Likelihood, MatchesExtendedPrecisionSum) {
  Philox rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto theta = random_theta(rng, 4, 2.0);
    const auto data = random_dataset(rng, 3000, theta);
    const auto probe = random_theta(rng, 4, 3.0);
    long double ref = 0.0L;
    for (std::size_t i = 0; i < data.size(); ++i) {
      long double z = 0.0L;
      for (std::size_t j = 0; j < data.d; ++j) z += static_cast<long double>(probe[static_cast<Eigen::Index>(j)]) * data.row(i)[j];
      const long double s = data.side[i] == OrderSide::MA ? -z : z;
      ref -= std::log1p(std::exp(s));
    }
    const double h = quasi_log_likelihood(probe, data);
    EXPECT_LE(h, 0.0);
    EXPECT_NEAR(h, static_cast<double>(ref), 1e-12 * std::abs(static_cast<double>(ref)));
  }
}

TEST(Derivatives, SymmetricDataHasZeroGradient) {
  Dataset data(3, 1);
  Philox rng(1);
  for (int i = 0; i < 50; ++i) {
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    data.push(OrderSide::MA, std::vector<double>{1.0, a, b});
    data.push(OrderSide::MB, std::vector<double>{1.0, a, b});
  }
  // Each feature vector carries one label of each kind.
  EXPECT_LT(gradient(Eigen::Vector3d::Zero(), data).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(Derivatives, GradientMatchesFiniteDifferences) {
  Philox rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = static_cast<Eigen::Index>(2 + rep % 4);
    const auto data = random_dataset(rng, 200 + 10 * static_cast<std::size_t>(rep), random_theta(rng, d, 1.5));
    const auto theta = random_theta(rng, d, 2.0);
    const auto g = gradient(theta, data);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
      Eigen::VectorXd tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      const double fd = (quasi_log_likelihood(tp, data) - quasi_log_likelihood(tm, data)) / (2 * h);
      EXPECT_LT(std::abs(fd - g[j]), 1e-6 * std::max(1.0, std::abs(g[j]))) << rep << " " << j;
    }
  }
}

TEST(Derivatives, HessianNegativeSemidefinite) {
  Philox rng(13);
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = static_cast<Eigen::Index>(1 + rep % 6);
    const auto data = random_dataset(rng, 50, random_theta(rng, d, 1.0));
    const auto theta = random_theta(rng, d, 10.0);
    const auto h = hessian(theta, data);
    EXPECT_TRUE(h.isApprox(h.transpose()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    EXPECT_LE(es.eigenvalues().maxCoeff(), 1e-10);
  }
}

TEST(Derivatives, ConcaveAlongSegments) {
  Philox rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const auto data = random_dataset(rng, 100, random_theta(rng, 3, 1.0));
    const auto a = random_theta(rng, 3, 5.0), b = random_theta(rng, 3, 5.0);
    const double mid = quasi_log_likelihood(0.5 * (a + b), data);
    EXPECT_GE(mid, 0.5 * (quasi_log_likelihood(a, data) + quasi_log_likelihood(b, data)) - 1e-9);
  }
}

TEST(Derivatives, RelabelAndNegateLeavesValue) {
  Philox rng(19);
  const auto data = random_dataset(rng, 500, random_theta(rng, 3, 1.0));
  Dataset flipped = data;
  for (auto& s : flipped.side) s = s == OrderSide::MA ? OrderSide::MB : OrderSide::MA;
  const auto theta = random_theta(rng, 3, 2.0);
  EXPECT_NEAR(quasi_log_likelihood(theta, data), quasi_log_likelihood(-theta, flipped), 1e-9);
}

TEST(Derivatives, ReproducibleBitForBit) {
  Philox rng(23);
  const auto data = random_dataset(rng, 5000, random_theta(rng, 4, 1.0));
  const auto theta = random_theta(rng, 4, 1.0);
  const auto a = evaluate(theta, data), b = evaluate(theta, data);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.gradient, b.gradient);
  EXPECT_EQ(a.hessian, b.hessian);
}

TEST(Gamma, ConstantModel) {
  Dataset data(1, 4);
  for (int i = 0; i < 40; ++i) data.push(i % 2 ? OrderSide::MA : OrderSide::MB, std::vector<double>{1.0}, i % 4);
  const auto g = estimate_gamma(Eigen::VectorXd::Zero(1), data);
  EXPECT_NEAR(g.gamma(0, 0), 40 * 0.25 / 4, 1e-12);
  EXPECT_FALSE(g.degenerate);
}

TEST(Gamma, IsScaledNegativeHessian) {
  Philox rng(29);
  const auto data = random_dataset(rng, 800, random_theta(rng, 3, 1.0), 8);
  const auto theta = random_theta(rng, 3, 1.0);
  EXPECT_TRUE(estimate_gamma(theta, data).gamma.isApprox(-hessian(theta, data) / 8.0, 1e-15));
}

TEST(Gamma, StandardErrors) {
  const auto se = standard_errors(Eigen::MatrixXd::Identity(3, 3), 100);
  ASSERT_TRUE(se);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR((*se)[j], 0.1, 1e-15);
  const auto se2 = standard_errors(Eigen::Vector2d(4.0, 1.0).asDiagonal(), 1);
  EXPECT_NEAR((*se2)[0], 0.5, 1e-15);
  EXPECT_NEAR((*se2)[1], 1.0, 1e-15);
  EXPECT_FALSE(standard_errors(Eigen::Vector2d(1.0, 0.0).asDiagonal(), 1));
}

TEST(Fit, NullEffectShrinksToZero) {
  Philox rng(31);
  const auto data = random_dataset(rng, 100000, Eigen::VectorXd::Zero(3), 10);
  const auto fit = fit_qmle(data);
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(fit.theta_hat.values.norm(), 0.05);
  EXPECT_LE(fit.gradient_norm, 1e-8);
  EXPECT_TRUE(fit.std_errors);
}

TEST(Fit, RecoversParameter) {
  Philox rng(37);
  Eigen::VectorXd truth(3);
  truth << 0.4, -1.2, 2.0;
  const auto data = random_dataset(rng, 50000, truth, 50);
  const auto fit = fit_qmle(data);
  ASSERT_TRUE(fit.converged);
  ASSERT_TRUE(fit.std_errors);
  for (Eigen::Index j = 0; j < 3; ++j)
    EXPECT_LT(std::abs(fit.theta_hat.values[j] - truth[j]), 4 * (*fit.std_errors)[j]);
  EXPECT_TRUE(fit.warnings.empty());
}

TEST(Fit, ObjectiveNeverDecreases) {
  Philox rng(41);
  const auto data = random_dataset(rng, 2000, Eigen::Vector3d(1.0, -3.0, 4.0));
  double prev = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 8; ++k) {
    FitOptions o;
    o.max_iter = k;
    const auto fit = fit_qmle(data, o);
    EXPECT_GE(fit.objective, prev);
    prev = fit.objective;
  }
}

TEST(Fit, SeparatedDataHitsBoundary) {
  Dataset data(2, 1);
  for (int i = 0; i < 20; ++i) {
    const double x = i % 2 ? 1.0 : -1.0;
    data.push(x > 0 ? OrderSide::MA : OrderSide::MB, std::vector<double>{1.0, x});
  }
  const auto fit = fit_qmle(data);
  EXPECT_TRUE(fit.boundary_hit);
  EXPECT_TRUE(fit.usable());
  EXPECT_NEAR(fit.theta_hat.values[1], kDefaultBoxRadius, 1e-9);
}

TEST(Fit, OneSidedDataFlagged) {
  Dataset data(2, 1);
  for (int i = 0; i < 20; ++i) data.push(OrderSide::MA, std::vector<double>{1.0, 0.1 * i});
  const auto fit = fit_qmle(data);
  EXPECT_TRUE(fit.boundary_hit);
  EXPECT_NE(std::find(fit.warnings.begin(), fit.warnings.end(), "one_sided_data"), fit.warnings.end());
}

TEST(Fit, RankDeficientFeaturesThrow) {
  Dataset data(3, 1);
  for (int i = 0; i < 30; ++i) {
    const double a = 0.03 * i;
    data.push(i % 2 ? OrderSide::MA : OrderSide::MB, std::vector<double>{1.0, a, 2 * a});
  }
  try {
    fit_qmle(data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularHessian);
    EXPECT_NE(std::string(e.what()).find("null directions"), std::string::npos);
  }
}

TEST(Fit, TooFewSamples) {
  Dataset data(3, 1);
  data.push(OrderSide::MA, std::vector<double>{1, 0, 0});
  EXPECT_THROW(fit_qmle(data), Error);
  EXPECT_THROW(fit_qmle(Dataset(2, 1)), Error);
}

TEST(Fit, RidgeShrinksAndIsReported) {
  Philox rng(43);
  const auto data = random_dataset(rng, 500, Eigen::Vector3d(0.5, 2.0, -2.0));
  FitOptions o;
  o.ridge = 50.0;
  const auto plain = fit_qmle(data), ridged = fit_qmle(data, o);
  EXPECT_LT(ridged.theta_hat.values.norm(), plain.theta_hat.values.norm());
  EXPECT_NE(std::find(ridged.warnings.begin(), ridged.warnings.end(), "ridge_penalty_applied"), ridged.warnings.end());
  EXPECT_LE(ridged.objective, plain.objective);
}

TEST(Fit, IterationLimitReported) {
  Philox rng(47);
  const auto data = random_dataset(rng, 500, Eigen::Vector3d(0.5, 2.0, -2.0));
  FitOptions o;
  o.max_iter = 1;
  const auto fit = fit_qmle(data, o);
  EXPECT_FALSE(fit.converged);
  EXPECT_FALSE(fit.usable());
  EXPECT_FALSE(fit.warnings.empty());
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "qcdlab/optimizer.hpp"

using namespace qcdlab;

namespace {

const double kRho = fixtures::kDecay;
const double kThetaPlus = 0.5 * (1.0 + std::sqrt(1.0 + 8.0 * kRho));

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// psi = (y, 1) on the Gaussian model; theta = (1, -1/2) is the LLR.
LinearClassSpec gaussian_affine() {
  LinearClassSpec spec;
  spec.basis = {Statistic::polynomial({0.0, 1.0}), Statistic::constant(1.0)};
  spec.normalization = vec({0.0, 1.0});
  return spec;
}

// psi = (1{y = 1}, 1) on the two-symbol model.
LinearClassSpec indicator_class() {
  LinearClassSpec spec;
  spec.basis = {Statistic::table({0.0, 1.0}, "indicator"), Statistic::constant(1.0)};
  spec.normalization = vec({0.0, 1.0});
  return spec;
}

LinearClassSpec llr_class(const ObservationModel& model) {
  LinearClassSpec spec;
  spec.basis = {llr(model), Statistic::constant(1.0)};
  spec.normalization = vec({0.0, 1.0});
  return spec;
}

// m1 * theta_+ of F_theta, or 0 where (A1)/(A3) fail.
double detection_rate(const ObservationModel& model, const LinearClassSpec& spec, const Eigen::VectorXd& theta) {
  try {
    const auto p = solve_exponents(model, spec.combine(theta), kRho);
    return p.m1 * p.theta_plus;
  } catch (const Error&) {
    return 0.0;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Cost approximation

TEST(CostApproxTheta, GaussianLlrValue) {
  const auto model = fixtures::gaussian();
  const double j = cost_approx_theta(model, gaussian_affine(), vec({1.0, -0.5}), 100.0, kRho);
  EXPECT_NEAR(j, std::log(100.0) / (0.5 * kThetaPlus), 1e-10);
  EXPECT_NEAR(j, 7.81356, 1e-4);
}

TEST(CostApproxTheta, ScalingInvariance) {
  const auto model = fixtures::two_symbol();
  const auto spec = indicator_class();
  const Eigen::VectorXd theta = vec({2.0, -1.1});
  const double base = cost_approx_theta(model, spec, theta, 50.0, kRho);
  for (double k : {0.25, 0.5, 3.0, 10.0}) EXPECT_NEAR(cost_approx_theta(model, spec, theta / k, 50.0, kRho), base, 1e-9 * base);
}

TEST(CostApproxTheta, KappaOneIsZero) {
  const auto model = fixtures::two_symbol();
  for (const auto& theta : {vec({2.0, -1.1}), vec({1.0, -0.6}), vec({3.0, -1.0})})
    EXPECT_DOUBLE_EQ(cost_approx_theta(model, indicator_class(), theta, 1.0, kRho), 0.0);
}

TEST(CostApproxTheta, PropagatesA1) {
  const auto model = fixtures::two_symbol();
  // 1{y = 1} alone has m0 = 0.2 > 0.
  EXPECT_THROW(cost_approx_theta(model, indicator_class(), vec({1.0, 0.0}), 10.0, kRho), AssumptionViolation);
  EXPECT_THROW(cost_approx_theta(model, indicator_class(), vec({1.0, -0.5}), 0.0, kRho), DomainError);
}

// ---------------------------------------------------------------------------
// Stationarity residual

TEST(StationarityResidual, MarkovLlrPlusDecayIsStationary) {
  const auto model = fixtures::two_state_markov();
  const auto r = stationarity_residual(model, llr_class(model), vec({1.0, kRho}), kRho);
  EXPECT_LT(r.norm, 1e-7);
}

TEST(StationarityResidual, DiscreteLlrPlusDecayIsStationary) {
  const auto model = fixtures::two_symbol();
  const auto r = stationarity_residual(model, llr_class(model), vec({1.0, kRho}), kRho);
  EXPECT_LT(r.norm, 1e-9);
}

TEST(StationarityResidual, PerturbationIsDetected) {
  const auto model = fixtures::two_state_markov();
  const auto r = stationarity_residual(model, llr_class(model), vec({1.1, kRho}), kRho);
  EXPECT_GT(r.norm, 1e-3);
}

TEST(StationarityResidual, PlainLlrIsNotStationary) {
  // Without the offset the twisted drift misses m1.
  const auto model = fixtures::two_symbol();
  const auto r = stationarity_residual(model, llr_class(model), vec({1.0, 0.0}), kRho);
  EXPECT_GT(std::abs(r.drift_gap), 1e-3);
}

// ---------------------------------------------------------------------------
// Linear optimisation

TEST(OptimizeLinear, DiscreteIndicatorRecoversLlrPlusDecay) {
  const auto model = fixtures::two_symbol();
  const auto result = optimize_linear(model, indicator_class(), kRho);
  ASSERT_TRUE(result.converged);
  const double slope = std::log(0.7 / 0.2) - std::log(0.3 / 0.8);
  EXPECT_NEAR(result.theta_star(0), slope, 1e-7);
  EXPECT_NEAR(result.theta_star(1), std::log(0.3 / 0.8) + kRho, 1e-7);
  EXPECT_NEAR(result.cgf_at_star, kRho, 1e-8);
  EXPECT_LE(result.residual.norm, 1e-6);
  EXPECT_NEAR(result.theta_plus_star, 1.0, 1e-7);
}

TEST(OptimizeLinear, DiscreteMatchesGridSearch) {
  // Oracle: maximise m1 theta_+ over directions (cos a, sin a) by refined grids,
  // which never touches the optimizer's gradients.
  const auto model = fixtures::two_symbol();
  const auto spec = indicator_class();
  double lo = -M_PI, hi = M_PI;
  double best = 0.0;
  for (int level = 0; level < 8; ++level) {
    double best_rate = -1.0;
    const int n = 200;
    for (int i = 0; i <= n; ++i) {
      const double a = lo + (hi - lo) * i / n;
      const double rate = detection_rate(model, spec, vec({std::cos(a), std::sin(a)}));
      if (rate > best_rate) {
        best_rate = rate;
        best = a;
      }
    }
    const double width = (hi - lo) / n;
    lo = best - 2.0 * width;
    hi = best + 2.0 * width;
  }
  const auto result = optimize_linear(model, spec, kRho);
  const double a_star = std::atan2(result.theta_star(1), result.theta_star(0));
  EXPECT_NEAR(a_star, best, 1e-5);
  EXPECT_GE(detection_rate(model, spec, result.theta_star) + 1e-12,
            detection_rate(model, spec, vec({std::cos(best), std::sin(best)})));
}

TEST(OptimizeLinear, MarkovLlrClassRecoversLlrPlusDecay) {
  const auto model = fixtures::two_state_markov();
  const auto result = optimize_linear(model, llr_class(model), kRho);
  ASSERT_TRUE(result.converged);
  EXPECT_NEAR(result.theta_star(0), 1.0, 1e-6);
  EXPECT_NEAR(result.theta_star(1), kRho, 1e-6);
  EXPECT_NEAR(result.cgf_at_star, kRho, 1e-8);
}

TEST(OptimizeLinear, GaussianAffineClass) {
  const auto model = fixtures::gaussian();
  const auto result = optimize_linear(model, gaussian_affine(), kRho);
  ASSERT_TRUE(result.converged);
  EXPECT_NEAR(result.theta_star(0), 1.0, 1e-7);
  EXPECT_NEAR(result.theta_star(1), -0.5 + kRho, 1e-7);
}

TEST(OptimizeLinear, CircleIsOrthogonalToNormalization) {
  const auto model = fixtures::two_state_markov();
  const auto spec = llr_class(model);
  const auto result = optimize_linear(model, spec, kRho);
  EXPECT_NEAR(spec.normalization.dot(result.theta_circ), 0.0, 1e-12);
  EXPECT_NEAR((result.theta_star - result.theta_circ - result.r_circ * spec.normalization).norm(), 0.0, 1e-14);
}

TEST(OptimizeLinear, NormalizedRepresentativeIsStationary) {
  const auto model = fixtures::two_symbol();
  const auto spec = indicator_class();
  const auto result = optimize_linear(model, spec, kRho);
  EXPECT_NEAR(solve_exponents(model, result.f_normalized, kRho).theta_plus, 1.0, 1e-9);
  // The residual is homogeneous of degree -1 in theta, so it vanishes on the whole ray.
  EXPECT_LE(stationarity_residual(model, spec, result.theta_normalized, kRho).norm, 1e-6);
}

TEST(OptimizeLinear, ObjectiveDecreasesAlongTrace) {
  const auto model = fixtures::two_symbol();
  const auto result = optimize_linear(model, indicator_class(), kRho);
  ASSERT_GE(result.trace.size(), 2u);
  for (std::size_t i = 1; i < result.trace.size(); ++i)
    EXPECT_LE(result.trace[i].objective, result.trace[i - 1].objective + 1e-15);
}

TEST(OptimizeLinear, EntropyIdentityHoldsAtEveryIterate) {
  for (const auto& model : {fixtures::two_symbol(), fixtures::two_state_markov()}) {
    const auto spec = std::holds_alternative<IidDiscrete>(model) ? indicator_class() : llr_class(model);
    const auto result = optimize_linear(model, spec, kRho);
    for (const auto& it : result.trace) EXPECT_LE(std::abs(it.entropy_residual), 1e-9) << "iterate " << it.iteration;
  }
}

TEST(OptimizeLinear, RejectsClassWithoutConstants) {
  const auto model = fixtures::two_symbol();
  LinearClassSpec spec;
  spec.basis = {llr(model)};
  spec.normalization = vec({1.0});
  EXPECT_THROW(optimize_linear(model, spec, kRho), AssumptionViolation);
}

TEST(OptimizeLinear, RejectsDegenerateClass) {
  const auto model = fixtures::two_symbol();
  LinearClassSpec spec;
  spec.basis = {Statistic::constant(1.0), Statistic::constant(2.0)};
  spec.normalization = vec({1.0, 0.0});
  EXPECT_THROW(optimize_linear(model, spec, kRho), DomainError);
}

TEST(OptimizeLinear, RejectsMismatchedNormalization) {
  const auto model = fixtures::two_symbol();
  auto spec = indicator_class();
  spec.normalization = vec({1.0});
  EXPECT_THROW(optimize_linear(model, spec, kRho), InvalidModel);
}

// Gamma_0(theta) = Lambda_0(F_theta) - pi1(F_theta) is unchanged along v.
TEST(OptimizeLinear, GammaZeroRayInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (const auto& model : {fixtures::two_symbol(), fixtures::two_state_markov()}) {
    const auto spec = std::holds_alternative<IidDiscrete>(model) ? indicator_class() : llr_class(model);
    const auto gamma0 = [&](const Eigen::VectorXd& theta) {
      const Statistic f = spec.combine(theta);
      return Cgf(model, f).value(1.0) - stationary_means_unchecked(model, f).m1;
    };
    for (int probe = 0; probe < 10; ++probe) {
      const Eigen::VectorXd theta = vec({u(rng), u(rng)});
      const double base = gamma0(theta);
      for (double r : {-1.0, 0.5, 2.0}) EXPECT_NEAR(gamma0(theta + r * spec.normalization), base, 1e-10);
    }
  }
}

// ---------------------------------------------------------------------------
// Scalar offset

TEST(OptimizeOffset, GaussianLlr) {
  const auto model = fixtures::gaussian();
  const auto out = optimize_offset(model, llr(model), kRho);
  EXPECT_NEAR(out.theta1, 1.0, 1e-10);
  EXPECT_NEAR(out.offset, kRho, 1e-10);
  EXPECT_NEAR(out.theta_plus, out.theta1, 1e-9);
}

TEST(OptimizeOffset, DriftMatchesPostMean) {
  for (const auto& model : {fixtures::gaussian(), fixtures::two_symbol(), fixtures::two_state_markov()}) {
    const Statistic f = std::holds_alternative<IidDiscrete>(model) ? fixtures::plus_minus_one() : llr(model);
    const auto out = optimize_offset(model, f, kRho);
    EXPECT_NEAR(out.drift_plus, out.m1, 1e-8);
    EXPECT_NEAR(out.theta_plus, out.theta1, 1e-8);
  }
}

TEST(OptimizeOffset, AlreadyOptimalHasZeroOffset) {
  const auto model = fixtures::two_symbol();
  const auto first = optimize_offset(model, fixtures::plus_minus_one(), kRho);
  const auto second = optimize_offset(model, first.f_star, kRho);
  EXPECT_NEAR(second.offset, 0.0, 1e-9);
  EXPECT_NEAR(second.theta1, first.theta1, 1e-9);
}

TEST(OptimizeOffset, RejectsWrongDriftOrdering) {
  const auto model = fixtures::two_symbol();
  EXPECT_THROW(optimize_offset(model, fixtures::plus_minus_one().scaled(-1.0), kRho), DomainError);
}

// ---------------------------------------------------------------------------
// Autocorrelation

TEST(Autocorrelation, UntiltedAtZero) {
  const auto model = fixtures::two_symbol();
  const auto r = autocorrelation(model, indicator_class(), vec({0.0, 0.0}));
  EXPECT_NEAR(r(0, 0), 0.2, 1e-14);
  EXPECT_NEAR(r(0, 1), 0.2, 1e-14);
  EXPECT_NEAR(r(1, 1), 1.0, 1e-14);
}

TEST(Autocorrelation, ConstantEntryIsOne) {
  const auto model = fixtures::two_state_markov();
  const auto r = autocorrelation(model, llr_class(model), vec({0.7, -0.3}));
  EXPECT_NEAR(r(1, 1), 1.0, 1e-10);
  EXPECT_NEAR((r - r.transpose()).norm(), 0.0, 1e-15);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r).eigenvalues().minCoeff(), -1e-12);
}

TEST(Autocorrelation, MatchesBruteForce) {
  const auto model = fixtures::two_symbol();
  const Eigen::VectorXd theta = vec({0.7, -0.2});
  const auto r = autocorrelation(model, indicator_class(), theta);
  const double pi0[2] = {0.8, 0.2};
  const double psi[2][2] = {{0.0, 1.0}, {1.0, 1.0}};
  double w[2], total = 0.0;
  for (int y = 0; y < 2; ++y) {
    w[y] = pi0[y] * std::exp(0.7 * psi[y][0] - 0.2 * psi[y][1]);
    total += w[y];
  }
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double expect = 0.0;
      for (int y = 0; y < 2; ++y) expect += w[y] / total * psi[y][i] * psi[y][j];
      EXPECT_NEAR(r(i, j), expect, 1e-14);
    }
}

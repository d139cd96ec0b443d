#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "fixtures.hpp"
#include "qcdlab/cusum.hpp"
#include "qcdlab/model.hpp"

using namespace qcdlab;

TEST(CusumUpdate, ReflectsAtZero) {
  EXPECT_EQ(cusum_update(0.0, -1.0), 0.0);
  EXPECT_EQ(cusum_update(2.0, 0.5), 2.5);
  EXPECT_EQ(cusum_update(0.3, -0.7), 0.0);
}

TEST(RunDetector, ConstantIncrementsStopAtCeiling) {
  const std::vector<double> ones(10, 1.0);
  const auto s = run_increments(ones, 2.5);
  EXPECT_TRUE(s.stopped);
  EXPECT_EQ(s.stop_time, 3);
  EXPECT_DOUBLE_EQ(s.xi, 3.0);
}

TEST(RunDetector, TinyThresholdStopsAfterFirstUpdate) {
  const std::vector<double> ones(3, 1.0);
  const auto s = run_increments(ones, 1e-9);
  EXPECT_EQ(s.stop_time, 1);
}

TEST(RunDetector, NegativeStreamNeverStops) {
  const std::vector<double> neg(500, -0.2);
  const auto s = run_increments(neg, 1.0);
  EXPECT_FALSE(s.stopped);
  EXPECT_EQ(s.stop_time, -1);
  EXPECT_EQ(s.xi, 0.0);
  EXPECT_EQ(s.n, 500);
}

TEST(RunDetector, RejectsNonPositiveThreshold) {
  EXPECT_THROW(DetectorState(0.0), DomainError);
  EXPECT_THROW(DetectorState(-1.0), DomainError);
}

TEST(RunDetector, AppliesStatisticToObservations) {
  const auto model = fixtures::two_symbol();
  const auto law = ChangeTimeLaw::point_mass(20);
  const auto path = sample_path(model, &law, 3, 400);
  const Statistic f = fixtures::plus_minus_one();
  const auto direct = run_detector(path.observations, f, 4.0);
  std::vector<double> inc;
  for (const auto& y : path.observations) inc.push_back(f(y));
  const auto via_increments = run_increments(inc, 4.0);
  EXPECT_EQ(direct.stop_time, via_increments.stop_time);
}

TEST(DetectorProperties, StateStaysNonnegativeAndBelowThresholdBeforeStop) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(-0.1, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    DetectorState s(3.0);
    for (int k = 0; k < 1000 && !s.stopped; ++k) {
      const double before = s.xi;
      s.push(normal(rng));
      EXPECT_GE(s.xi, 0.0);
      if (!s.stopped) EXPECT_LT(s.xi, 3.0);
      else EXPECT_LT(before, 3.0);
    }
    if (s.stopped) EXPECT_GE(s.xi, 3.0);
  }
}

TEST(DetectorProperties, StopTimeMonotoneInThreshold) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.05, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> inc(3000);
    for (auto& x : inc) x = normal(rng);
    long previous = 0;
    for (double h : {0.5, 1.0, 2.0, 3.5, 5.0, 8.0}) {
      const auto s = run_increments(inc, h);
      const long t = s.stopped ? s.stop_time : 1000000;
      EXPECT_GE(t, previous);
      previous = t;
    }
  }
}

TEST(DetectorProperties, ScaleEquivariance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    // Dyadic increments keep k F and k H exact in floating point.
    std::vector<double> inc(2000);
    for (auto& x : inc) x = std::round(normal(rng) * 64.0) / 64.0 + 0.0625;
    for (double k : {0.25, 2.0, 8.0}) {
      std::vector<double> scaled(inc);
      for (auto& x : scaled) x *= k;
      EXPECT_EQ(run_increments(inc, 4.0).stop_time, run_increments(scaled, 4.0 * k).stop_time);
    }
  }
}

TEST(PathwiseLoss, DelayAndEagerness) {
  EXPECT_EQ(pathwise_loss(12, 10, 5.0), 2.0);
  EXPECT_EQ(pathwise_loss(8, 10, 5.0), 10.0);
  EXPECT_EQ(pathwise_loss(10, 10, 5.0), 0.0);
}

TEST(CostSpec, KappaMustBePositive) {
  EXPECT_THROW(CostSpec(0.0), DomainError);
  EXPECT_EQ(CostSpec(3.0).kappa, 3.0);
}

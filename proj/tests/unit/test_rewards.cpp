#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "difftraffic/jacobian.hpp"
#include "difftraffic/rewards.hpp"

namespace difftraffic {
namespace {

TrafficState with_velocities(std::vector<double> vs) {
  TrafficState state;
  double x = 1000.0;
  for (double v : vs) {
    state.vehicles.push_back({x, v});
    x -= 20.0;
  }
  return state;
}

FuelModel constant_fuel(double g) {
  FuelModel m;
  m.c0 = g;
  m.c1 = m.c2 = m.c3 = m.c4 = 0.0;
  m.g_idle = g;
  return m;
}

TEST(RVel, ArithmeticMean) {
  EXPECT_DOUBLE_EQ(r_vel(with_velocities({10, 20, 30})), 20.0);
  EXPECT_DOUBLE_EQ(r_vel(with_velocities({7})), 7.0);
  EXPECT_DOUBLE_EQ(r_vel(with_velocities({0, 0, 0})), 0.0);
  EXPECT_THROW(r_vel(TrafficState{}), std::invalid_argument);
}

TEST(RVel, InvariantToPositionsAndPermutation) {
  TrafficState a = with_velocities({3, 9, 4});
  TrafficState b = with_velocities({4, 3, 9});
  b.vehicles[0].x = 5.0;
  EXPECT_DOUBLE_EQ(r_vel(a), r_vel(b));
}

TEST(FuelRate, ShippedDefaults) {
  const FuelModel m;
  EXPECT_DOUBLE_EQ(fuel_rate(0.0, 0.0, m), 1.64e-4);
  EXPECT_NEAR(fuel_rate(10.0, 0.0, m), 2.24e-4, 1e-18);
  EXPECT_EQ(fuel_rate(10.0, -2.0, m), fuel_rate(10.0, 0.0, m));
  EXPECT_GT(fuel_rate(10.0, 1.0, m), fuel_rate(10.0, 0.0, m));
}

TEST(FuelRate, NeverBelowIdleFloor) {
  FuelModel m;
  m.c0 = -1.0;
  for (double v : {0.0, 1.0, 10.0, 30.0}) EXPECT_EQ(fuel_rate(v, 0.0, m), m.g_idle);
}

TEST(RMpg, SingleVehicleHandValue) {
  const TrafficState state = with_velocities({16.09});
  const std::vector<double> acc{0.0};
  EXPECT_NEAR(r_mpg(state, acc, constant_fuel(1e-3)), 10.0, 1e-12);
}

TEST(RMpg, StationaryIsZeroAndDuplicatesAverage) {
  const FuelModel m;
  const std::vector<double> zeros3(3, 0.0);
  EXPECT_EQ(r_mpg(with_velocities({0, 0, 0}), zeros3, m), 0.0);
  const std::vector<double> one{0.3};
  const std::vector<double> two{0.3, 0.3};
  EXPECT_DOUBLE_EQ(r_mpg(with_velocities({12.0}), one, m), r_mpg(with_velocities({12.0, 12.0}), two, m));
}

TEST(RMpg, LinearInVelocityForFixedFuel) {
  const FuelModel m = constant_fuel(2e-4);
  const std::vector<double> acc{0.0, 0.0};
  const double base = r_mpg(with_velocities({5.0, 8.0}), acc, m);
  const double doubled = r_mpg(with_velocities({10.0, 16.0}), acc, m);
  EXPECT_NEAR(doubled, 2.0 * base, 1e-12);
}

TEST(RMpg, SizeMismatchIsRejected) {
  const std::vector<double> acc{0.0};
  EXPECT_THROW(r_mpg(with_velocities({1, 2}), acc, FuelModel{}), std::invalid_argument);
}

TEST(Jerk, Basics) {
  EXPECT_EQ(jerk_penalty(0.5, 0.5), 0.0);
  EXPECT_EQ(jerk_penalty(1.0, 0.0), 1.0);
  EXPECT_EQ(jerk_penalty(-0.7, 2.1), jerk_penalty(2.1, -0.7));
  EXPECT_GT(jerk_penalty(0.0, 1e-9), 0.0);
}

TEST(RComb, HandValue) {
  const TrafficState state = with_velocities({10, 20, 30});
  const std::vector<double> acc(3, 0.0);
  const RewardWeights w{1.0, 0.0, 1.0};
  EXPECT_NEAR(r_comb(state, acc, 1.0, 0.0, w, FuelModel{}), 19.0, 1e-12);
}

TEST(RComb, NullAndJerkFreeWeights) {
  const TrafficState state = with_velocities({10, 20, 30});
  const std::vector<double> acc{0.5, -0.2, 0.0};
  EXPECT_EQ(r_comb(state, acc, 2.0, -1.0, RewardWeights{0, 0, 0}, FuelModel{}), 0.0);
  const RewardWeights no_jerk{1.0, 0.1, 0.0};
  EXPECT_EQ(r_comb(state, acc, 2.0, -1.0, no_jerk, FuelModel{}),
            r_comb(state, acc, -3.0, 0.4, no_jerk, FuelModel{}));
}

TEST(RComb, WeightValidation) {
  EXPECT_THROW((RewardWeights{-1.0, 0, 0}.validate()), std::invalid_argument);
  EXPECT_THROW((RewardWeights{1.0, NAN, 0}.validate()), std::invalid_argument);
  FuelModel m;
  m.g_idle = 0.0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(RewardGradState, FlowOnlyHandValue) {
  const TrafficState state = with_velocities({3, 5, 7, 9});
  const std::vector<double> acc(4, 0.0);
  const Eigen::VectorXd grad = reward_grad_state(state, acc, RewardWeights{1, 0, 0}, FuelModel{});
  for (Eigen::Index k = 0; k < 8; ++k) EXPECT_EQ(grad[k], k % 2 == 1 ? 0.25 : 0.0);
}

TEST(RewardGradState, ZeroWeightsGiveZero) {
  const TrafficState state = with_velocities({3, 5});
  const std::vector<double> acc{0.2, 0.0};
  EXPECT_TRUE(reward_grad_state(state, acc, RewardWeights{0, 0, 0}, FuelModel{}).isZero(0.0));
}

TEST(RewardGradState, MatchesFiniteDifferences) {
  const IdmParams params;
  const StepConfig cfg;
  const RewardWeights w;
  const FuelModel m;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> accel(-2.0, 2.0);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const TrafficState state = random_ring(6, params, cfg, trial);
    std::vector<double> acc(6);
    for (double& a : acc) a = accel(rng);
    const Eigen::VectorXd grad = reward_grad_state(state, acc, w, m);
    const Eigen::VectorXd x = flatten(state);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      Eigen::VectorXd xp = x;
      Eigen::VectorXd xm = x;
      xp[k] += h;
      xm[k] -= h;
      const double fd = (r_comb(unflatten(xp, state), acc, 0.3, 0.1, w, m) -
                         r_comb(unflatten(xm, state), acc, 0.3, 0.1, w, m)) /
                        (2 * h);
      worst = std::max(worst, std::abs(grad[k] - fd));
    }
  }
  EXPECT_LE(worst, 1e-7);
}

TEST(RewardGradAcceleration, MatchesFiniteDifferences) {
  const RewardWeights w;
  const FuelModel m;
  const TrafficState state = with_velocities({4, 12, 20});
  const double h = 1e-6;
  for (double a : {0.4, 1.7, 2.5}) {
    std::vector<double> plus{0.0, a + h, 0.0};
    std::vector<double> minus{0.0, a - h, 0.0};
    std::vector<double> nominal{0.0, a, 0.0};
    const double fd = (r_comb(state, plus, 0, 0, w, m) - r_comb(state, minus, 0, 0, w, m)) / (2 * h);
    EXPECT_NEAR(reward_grad_acceleration(state, nominal, 1, w, m), fd, 1e-9);
  }
  std::vector<double> braking{0.0, -1.0, 0.0};
  EXPECT_EQ(reward_grad_acceleration(state, braking, 1, w, m), 0.0);
}

TEST(JerkGrad, SignAndKink) {
  const RewardWeights w{1.0, 0.1, 2.0};
  EXPECT_EQ(jerk_grad(1.0, 0.0, w), -2.0);
  EXPECT_EQ(jerk_grad(-1.0, 0.0, w), 2.0);
  EXPECT_EQ(jerk_grad(0.5, 0.5, w), 0.0);
}

TEST(Monotonicity, RaisingOneVelocityNeverLowersFlow) {
  TrafficState state = with_velocities({3, 5, 7});
  const double before = r_vel(state);
  state.vehicles[1].v += 0.5;
  EXPECT_GE(r_vel(state), before);
}

}  // namespace
}  // namespace difftraffic

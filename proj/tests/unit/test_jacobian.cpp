#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "difftraffic/jacobian.hpp"
#include "difftraffic/rewards.hpp"

namespace difftraffic {
namespace {

TrafficState follower_pair() {
  // Follower at v=10 behind a leader at v=10 with a 12 m gap, so s* = s = 12.
  TrafficState state;
  state.vehicles = {{117.0, 10.0}, {100.0, 10.0}};
  return state;
}

bool structurally_nonzero(const TrafficState& state, Eigen::Index row, Eigen::Index col) {
  const auto bi = static_cast<std::size_t>(row / 2);
  const auto bj = static_cast<std::size_t>(col / 2);
  if (bi == bj) return true;
  const auto lead = state.leader(bi);
  return lead && *lead == bj;
}

TEST(DynamicsJacobian, TopRowsMatchKinematics) {
  const IdmParams params;
  const TrafficState state = random_ring(6, params, StepConfig{}, 11);
  const BlockJacobian jac = dynamics_jacobian(state, params);
  for (std::size_t i = 0; i < state.size(); ++i) {
    EXPECT_EQ(jac.diag[i](0, 0), 0.0);
    EXPECT_EQ(jac.diag[i](0, 1), 1.0);
    EXPECT_EQ(jac.sub[i](0, 0), 0.0);
    EXPECT_EQ(jac.sub[i](0, 1), 0.0);
  }
}

TEST(DynamicsJacobian, HandEvaluatedPositionPartials) {
  const IdmParams params;
  const TrafficState state = follower_pair();
  ASSERT_DOUBLE_EQ(headway(state, 1, params), 12.0);
  const BlockJacobian jac = dynamics_jacobian(state, params);
  EXPECT_NEAR(jac.diag[1](1, 0), -1.0 / 6.0, 1e-15);
  EXPECT_NEAR(jac.sub[1](1, 0), 1.0 / 6.0, 1e-15);
}

TEST(DynamicsJacobian, HandEvaluatedVelocityPartials) {
  const IdmParams params;
  const TrafficState state = follower_pair();
  const BlockJacobian jac = dynamics_jacobian(state, params);
  const double sqrt_ab = std::sqrt(1.5);
  const double free = -4.0 * std::pow(10.0 / 30.0, 3.0) / 30.0;
  const double dv = free - 2.0 / 144.0 * (1.0 + 10.0 / (2.0 * sqrt_ab)) * 12.0;
  const double dvl = 2.0 * 12.0 * 10.0 / (2.0 * 144.0 * sqrt_ab);
  EXPECT_NEAR(jac.diag[1](1, 1), dv, 1e-15);
  EXPECT_NEAR(jac.sub[1](1, 1), dvl, 1e-15);
}

TEST(DynamicsJacobian, LeaderlessVehicleUsesFreeRoadTerms) {
  const IdmParams params;
  const TrafficState state = follower_pair();
  const BlockJacobian jac = dynamics_jacobian(state, params);
  EXPECT_EQ(jac.diag[0](1, 0), 0.0);
  EXPECT_NEAR(jac.diag[0](1, 1), -4.0 * std::pow(10.0 / 30.0, 3.0) / 30.0, 1e-15);
  EXPECT_FALSE(jac.leaders[0].has_value());
}

TEST(DynamicsJacobian, ThreeVehicleOpenRoadZeroPattern) {
  const IdmParams params;
  const TrafficState state = random_platoon(3, params, StepConfig{}, 5);
  const Eigen::MatrixXd dense = dynamics_jacobian(state, params).dense();
  for (Eigen::Index r = 0; r < 6; ++r) {
    for (Eigen::Index c = 0; c < 6; ++c) {
      const bool allowed = (r / 2 == c / 2) || (r / 2 == c / 2 + 1);
      if (!allowed) EXPECT_EQ(dense(r, c), 0.0) << r << "," << c;
    }
  }
  EXPECT_NE(dense(3, 0), 0.0);
  EXPECT_NE(dense(5, 2), 0.0);
}

TEST(StepJacobian, FreeFlowAtDesiredSpeed) {
  const IdmParams params;
  const StepConfig cfg;
  TrafficState state;
  state.vehicles = {{0.0, 30.0}};
  const StepResult res = step(state, params, cfg);
  const BlockJacobian jac = step_jacobian(state, params, cfg, res.flags);
  EXPECT_DOUBLE_EQ(jac.diag[0](0, 0), 1.0);
  EXPECT_DOUBLE_EQ(jac.diag[0](0, 1), 0.1);
  EXPECT_EQ(jac.diag[0](1, 0), 0.0);
  EXPECT_NEAR(jac.diag[0](1, 1), 1.0 - 0.1 * 4.0 / 30.0, 1e-15);
}

TEST(StepJacobian, IdentityLimitAsDtVanishes) {
  const IdmParams params;
  StepConfig cfg;
  cfg.dt = 1e-12;
  const TrafficState state = random_ring(5, params, StepConfig{}, 2);
  const Eigen::MatrixXd dense =
      step_jacobian(state, params, cfg, StepFlags::all_idm(state.size())).dense();
  EXPECT_LT((dense - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(StepJacobian, ClippedVehicleHasZeroVelocityRow) {
  const IdmParams params;
  const StepConfig cfg;
  TrafficState state;
  // The follower is nearly stopped and far too close: IDM brakes hard and clips.
  state.vehicles = {{100.0, 0.0}, {94.0, 0.2}, {60.0, 5.0}};
  const StepResult res = step(state, params, cfg);
  ASSERT_TRUE(res.flags.clipped[1]);
  const Eigen::MatrixXd dense = step_jacobian(state, params, cfg, res.flags).dense();
  EXPECT_TRUE(dense.row(3).isZero(0.0));
  EXPECT_EQ(dense(2, 2), 1.0);
  EXPECT_EQ(dense(2, 3), cfg.dt);
  EXPECT_FALSE(dense.row(5).isZero(0.0));
}

TEST(StepJacobian, FlagSizeMismatchIsRejected) {
  const IdmParams params;
  const TrafficState state = random_platoon(3, params, StepConfig{}, 1);
  EXPECT_THROW(step_jacobian(state, params, StepConfig{}, StepFlags::all_idm(2)),
               std::invalid_argument);
}

class FiniteDifferenceAgreement : public ::testing::TestWithParam<std::tuple<std::size_t, bool>> {};

TEST_P(FiniteDifferenceAgreement, HundredRandomStates) {
  const auto [n, ring] = GetParam();
  const IdmParams params;
  const StepConfig cfg;
  double worst = 0.0;
  double worst_structural_zero = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const TrafficState state = ring ? random_ring(n, params, cfg, trial) : random_platoon(n, params, cfg, trial);
    const StepResult res = step(state, params, cfg);
    const Eigen::MatrixXd analytical = step_jacobian(state, params, cfg, res.flags).dense();
    const Eigen::MatrixXd fd = finite_difference_jacobian(state, params, cfg, 1e-5);
    worst = std::max(worst, (analytical - fd).cwiseAbs().maxCoeff());
    for (Eigen::Index r = 0; r < fd.rows(); ++r) {
      for (Eigen::Index c = 0; c < fd.cols(); ++c) {
        if (!structurally_nonzero(state, r, c)) {
          worst_structural_zero = std::max(worst_structural_zero, std::abs(fd(r, c)));
          ASSERT_EQ(analytical(r, c), 0.0);
        }
      }
    }
  }
  EXPECT_LE(worst, 1e-6);
  EXPECT_LE(worst_structural_zero, 1e-8);
}

INSTANTIATE_TEST_SUITE_P(Sizes, FiniteDifferenceAgreement,
                         ::testing::Combine(::testing::Values(2, 10, 50), ::testing::Bool()));

TEST(StepJacobian, RingHasExactlyOneCornerBlock) {
  const IdmParams params;
  const StepConfig cfg;
  const TrafficState state = random_ring(5, params, cfg, 9);
  const Eigen::MatrixXd dense =
      step_jacobian(state, params, cfg, step(state, params, cfg).flags).dense();
  EXPECT_NE((dense.block<2, 2>(0, 8).norm()), 0.0);
  for (Eigen::Index r = 0; r < 10; ++r) {
    for (Eigen::Index c = 0; c < 10; ++c) {
      if (!structurally_nonzero(state, r, c)) EXPECT_EQ(dense(r, c), 0.0);
    }
  }
}

TEST(StepJacobian, ApplyMatchesDense) {
  const IdmParams params;
  const StepConfig cfg;
  const TrafficState state = random_ring(7, params, cfg, 4);
  const BlockJacobian jac = step_jacobian(state, params, cfg, step(state, params, cfg).flags);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(14, -1.0, 2.0);
  EXPECT_LT((jac.apply(x) - jac.dense() * x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FiniteDifference, ClippedRowsMatchZeroingAwayFromKink) {
  const IdmParams params;
  const StepConfig cfg;
  TrafficState state;
  state.vehicles = {{100.0, 0.0}, {94.0, 0.2}, {60.0, 5.0}};
  const StepResult res = step(state, params, cfg);
  ASSERT_TRUE(res.flags.clipped[1]);
  const Eigen::MatrixXd fd = finite_difference_jacobian(state, params, cfg, 1e-5);
  EXPECT_LT(fd.row(3).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FiniteDifference, WarnsWhenStepUnderflows) {
  const IdmParams params;
  const StepConfig cfg;
  const TrafficState state = random_platoon(2, params, cfg, 0);
  EXPECT_FALSE(finite_difference_resolvable(state, 1e-18));
  EXPECT_TRUE(finite_difference_resolvable(state, 1e-5));
  std::ostringstream captured;
  auto* old = std::clog.rdbuf(captured.rdbuf());
  finite_difference_jacobian(state, params, cfg, 1e-18);
  std::clog.rdbuf(old);
  EXPECT_NE(captured.str().find("warning"), std::string::npos);
  EXPECT_THROW(finite_difference_jacobian(state, params, cfg, 0.0), std::invalid_argument);
}

TEST(ActionSensitivity, UnclippedSeedsOwnVelocity) {
  const IdmParams params;
  const StepConfig cfg;
  TrafficState state = random_platoon(4, params, cfg, 8);
  state.controlled_index = 2;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(8);
  const ActionSensitivity sens = action_sensitivity(state, params, cfg, 0.5, zero);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(8);
  expected[5] = cfg.dt;
  EXPECT_EQ(sens.d_next_state_d_action, expected);
  EXPECT_EQ(sens.d_reward_d_action, 0.0);
}

TEST(ActionSensitivity, ClippedControlledVehicleIsZero) {
  const IdmParams params;
  const StepConfig cfg;
  TrafficState state;
  state.vehicles = {{100.0, 5.0}, {50.0, 0.1}};
  state.controlled_index = 1;
  const Eigen::VectorXd grad = Eigen::VectorXd::Ones(4);
  const ActionSensitivity sens = action_sensitivity(state, params, cfg, -3.0, grad);
  EXPECT_TRUE(sens.d_next_state_d_action.isZero(0.0));
  EXPECT_EQ(sens.d_reward_d_action, 0.0);
}

TEST(ActionSensitivity, FlowRewardGradientIsDtOverN) {
  const IdmParams params;
  const StepConfig cfg;
  TrafficState state = random_ring(5, params, cfg, 13);
  state.controlled_index = 0;
  const RewardWeights weights{1.0, 0.0, 0.0};
  const StepResult res = step(state, params, cfg, 0.25);
  const Eigen::VectorXd grad = reward_grad_state(res.next, res.accelerations, weights, FuelModel{});
  const ActionSensitivity sens = action_sensitivity(state, params, cfg, 0.25, grad);
  EXPECT_NEAR(sens.d_reward_d_action, cfg.dt / 5.0, 1e-15);
}

TEST(ActionSensitivity, OpenRoadCausalityZeroAhead) {
  const IdmParams params;
  const StepConfig cfg;
  TrafficState state = random_platoon(6, params, cfg, 21);
  state.controlled_index = 3;
  const ActionSensitivity sens =
      action_sensitivity(state, params, cfg, 1.0, Eigen::VectorXd::Zero(12));
  EXPECT_TRUE(sens.d_next_state_d_action.head(6).isZero(0.0));
}

TEST(ActionSensitivity, MissingControlledIndexIsRejected) {
  const IdmParams params;
  const StepConfig cfg;
  const TrafficState state = random_platoon(3, params, cfg, 1);
  EXPECT_THROW(action_sensitivity(state, params, cfg, 1.0, Eigen::VectorXd::Zero(6)),
               std::invalid_argument);
}

TEST(ActionSensitivity, MatchesFiniteDifferenceOfStep) {
  const IdmParams params;
  const StepConfig cfg;
  const double h = 1e-5;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    TrafficState state = random_ring(8, params, cfg, trial);
    state.controlled_index = trial % 8;
    const double a = -1.5 + 0.05 * static_cast<double>(trial);
    const ActionSensitivity sens =
        action_sensitivity(state, params, cfg, a, Eigen::VectorXd::Zero(16));
    const StepResult plus = step(state, params, cfg, a + h);
    const StepResult minus = step(state, params, cfg, a - h);
    Eigen::VectorXd diff = flatten(plus.next) - flatten(minus.next);
    for (Eigen::Index k = 0; k < diff.size(); k += 2) diff[k] = std::remainder(diff[k], state.ring_length());
    EXPECT_LT((sens.d_next_state_d_action - diff / (2 * h)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(RandomStates, AreInteriorAndValid) {
  const IdmParams params;
  const StepConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const TrafficState& state :
         {random_platoon(10, params, cfg, seed), random_ring(10, params, cfg, seed)}) {
      EXPECT_NO_THROW(validate_state(state, params));
      const StepResult res = step(state, params, cfg);
      for (bool c : res.flags.clipped) EXPECT_FALSE(c);
    }
  }
  EXPECT_EQ(random_ring(10, params, cfg, 3), random_ring(10, params, cfg, 3));
}

TEST(JacobianBenchmark, ReproducibleStreamAndCsv) {
  const JacobianBenchmarkReport a = jacobian_benchmark(10, 20, 4);
  const JacobianBenchmarkReport b = jacobian_benchmark(10, 20, 4);
  EXPECT_EQ(a.analytical_checksum, b.analytical_checksum);
  EXPECT_EQ(a.n, 10u);
  EXPECT_EQ(a.iters, 20u);
  EXPECT_GT(a.finite_difference_s, 0.0);
  std::ostringstream csv;
  const std::vector<JacobianBenchmarkReport> rows{a};
  write_benchmark_csv(csv, rows);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "n,iters,analytical_s,fd_s,speedup");
  EXPECT_THROW(jacobian_benchmark(1, 10), std::invalid_argument);
  EXPECT_THROW(jacobian_benchmark(10, 0), std::invalid_argument);
}

}  // namespace
}  // namespace difftraffic

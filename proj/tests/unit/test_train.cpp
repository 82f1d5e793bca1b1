#include <gtest/gtest.h>

#include <sstream>

#include "difftraffic/train.hpp"

namespace difftraffic {
namespace {

ScenarioConfig small_scenario() {
  ScenarioConfig cfg;
  cfg.track_length = 80.0;
  cfg.num_vehicles = 5;
  cfg.horizon = 20;
  cfg.warmup_steps = 10;
  return cfg;
}

TrainConfig small_training(Algorithm algo) {
  TrainConfig cfg;
  cfg.algorithm = algo;
  cfg.iterations = 3;
  cfg.steps_per_iteration = 50;
  cfg.minibatch_size = 16;
  cfg.epochs = 2;
  cfg.hidden_sizes = {8};
  cfg.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  return cfg;
}

void expect_same_metrics(const std::vector<IterationMetrics>& a, const std::vector<IterationMetrics>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].iteration, b[k].iteration);
    EXPECT_EQ(a[k].mean_reward, b[k].mean_reward);
    EXPECT_EQ(a[k].std_reward, b[k].std_reward);
    EXPECT_EQ(a[k].mean_r_vel, b[k].mean_r_vel);
    EXPECT_EQ(a[k].mean_r_mpg, b[k].mean_r_mpg);
    EXPECT_EQ(a[k].mean_jerk_pen, b[k].mean_jerk_pen);
    EXPECT_EQ(a[k].collisions, b[k].collisions);
  }
}

TEST(TrainSeed, ReproducibleUnderSeed) {
  const TrainConfig cfg = small_training(Algorithm::kDiffPpo);
  const SeedRun a = train_seed(small_scenario(), cfg, 4, true);
  const SeedRun b = train_seed(small_scenario(), cfg, 4, true);
  ASSERT_FALSE(a.error.has_value());
  expect_same_metrics(a.log, b.log);
  EXPECT_EQ(a.parameter_trace, b.parameter_trace);
  EXPECT_EQ(a.policy.flat_parameters(), b.policy.flat_parameters());
  const SeedRun c = train_seed(small_scenario(), cfg, 5, true);
  EXPECT_NE(a.parameter_trace.back(), c.parameter_trace.back());
}

TEST(TrainSeed, ZeroEtaDiffPpoMatchesPpoExactly) {
  TrainConfig ppo = small_training(Algorithm::kPpo);
  TrainConfig diff = small_training(Algorithm::kDiffPpo);
  diff.perturbation.eta = 0.0;
  for (std::uint64_t seed : {0u, 7u}) {
    const SeedRun a = train_seed(small_scenario(), ppo, seed, true);
    const SeedRun b = train_seed(small_scenario(), diff, seed, true);
    ASSERT_EQ(a.parameter_trace.size(), 3u);
    EXPECT_EQ(a.parameter_trace, b.parameter_trace);
    expect_same_metrics(a.log, b.log);
    EXPECT_EQ(b.audit.units_perturbed, 0u);
  }
}

TEST(TrainSeed, DiffPpoPerturbsWithinBound) {
  TrainConfig cfg = small_training(Algorithm::kDiffPpo);
  cfg.perturbation.delta = 0.001;
  const SeedRun run = train_seed(small_scenario(), cfg, 2);
  ASSERT_FALSE(run.error.has_value());
  EXPECT_EQ(run.audit.units_seen, 150u);
  EXPECT_GT(run.audit.units_perturbed, 0u);
  EXPECT_EQ(run.audit.bound_violations, 0u);
  EXPECT_LE(run.audit.max_state_shift, 0.001);
}

TEST(TrainSeed, PerturbationChangesLearning) {
  const SeedRun a = train_seed(small_scenario(), small_training(Algorithm::kPpo), 3, true);
  const SeedRun b = train_seed(small_scenario(), small_training(Algorithm::kDiffPpo), 3, true);
  EXPECT_NE(a.parameter_trace.front(), b.parameter_trace.front());
}

TEST(Train, TenSeedBookkeeping) {
  const TrainConfig cfg = small_training(Algorithm::kPpo);
  std::size_t callbacks = 0;
  TrainOptions options;
  options.on_iteration = [&](const SeedRun&, const IterationMetrics&) { ++callbacks; };
  const TrainResult res = train(small_scenario(), cfg, options);
  ASSERT_EQ(res.runs.size(), 10u);
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_EQ(res.runs[k].seed, k);
    EXPECT_FALSE(res.runs[k].error.has_value());
    ASSERT_EQ(res.runs[k].log.size(), 3u);
    EXPECT_EQ(res.runs[k].log[2].iteration, 3u);
  }
  EXPECT_EQ(callbacks, 30u);
  ASSERT_EQ(res.aggregate.size(), 3u);
  double sum = 0.0;
  for (const auto& run : res.runs) sum += run.log[1].mean_reward;
  EXPECT_EQ(res.aggregate[1].seeds, 10u);
  EXPECT_NEAR(res.aggregate[1].mean_reward.first, sum / 10.0, 1e-9);
}

TEST(Train, ParallelMatchesSerial) {
  TrainConfig cfg = small_training(Algorithm::kDiffPpo);
  cfg.seeds = {11, 12, 13};
  TrainOptions serial;
  TrainOptions parallel;
  parallel.jobs = 3;
  const TrainResult a = train(small_scenario(), cfg, serial);
  const TrainResult b = train(small_scenario(), cfg, parallel);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a.runs[k].seed, b.runs[k].seed);
    expect_same_metrics(a.runs[k].log, b.runs[k].log);
  }
}

TEST(Train, FailingSeedIsRecordedAndOthersContinue) {
  TrainConfig cfg = small_training(Algorithm::kPpo);
  cfg.learning_rate = 1e12;
  cfg.max_grad_norm = 1e12;
  cfg.iterations = 3;
  cfg.seeds = {0, 1};
  const TrainResult res = train(small_scenario(), cfg);
  ASSERT_EQ(res.runs.size(), 2u);
  ASSERT_TRUE(res.runs[0].error.has_value());
  EXPECT_NE(res.runs[0].error->find("iteration 1: non-finite PPO loss"), std::string::npos);
  EXPECT_FALSE(res.runs[1].error.has_value());
  EXPECT_EQ(res.runs[1].log.size(), 3u);
  ASSERT_EQ(res.aggregate.size(), 3u);
  EXPECT_EQ(res.aggregate[0].seeds, 1u);
}

TEST(Aggregate, SampleStdOverSeeds) {
  std::vector<SeedRun> runs(3);
  const double rewards[] = {1.0, 2.0, 6.0};
  for (std::size_t k = 0; k < 3; ++k) {
    IterationMetrics m;
    m.iteration = 1;
    m.mean_reward = rewards[k];
    m.collisions = k;
    runs[k].log.push_back(m);
  }
  runs[2].error = "failed";
  std::vector<AggregateRow> rows = aggregate_runs(runs);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].seeds, 2u);
  EXPECT_DOUBLE_EQ(rows[0].mean_reward.first, 1.5);
  EXPECT_DOUBLE_EQ(rows[0].mean_reward.second, std::sqrt(0.5));
  EXPECT_DOUBLE_EQ(rows[0].collisions.first, 0.5);
}

TEST(Csv, AggregateLayout) {
  AggregateRow row;
  row.iteration = 4;
  row.seeds = 10;
  row.mean_reward = {2.5, 0.5};
  std::ostringstream out;
  write_aggregate_csv(out, std::vector<AggregateRow>{row});
  std::istringstream lines(out.str());
  std::string header;
  std::string first;
  std::getline(lines, header);
  std::getline(lines, first);
  EXPECT_EQ(header.rfind("iteration,seeds,mean_reward_mean_over_seeds,mean_reward_std_over_seeds,", 0),
            0u);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 13);
  EXPECT_EQ(first.rfind("4,10,2.5,0.5,", 0), 0u);
}

TEST(Csv, SeedLogLayout) {
  IterationMetrics m;
  m.iteration = 1;
  m.mean_reward = -3.25;
  m.collisions = 2;
  std::ostringstream out;
  write_seed_log_csv(out, std::vector<IterationMetrics>{m});
  EXPECT_EQ(out.str(),
            "iteration,mean_reward,std_reward,mean_r_vel,mean_r_mpg,mean_jerk_pen,collisions,"
            "wall_time_s\n1,-3.25,0,0,0,0,2,0\n");
}

TEST(Evaluate, DeterministicAndValidated) {
  const ScenarioConfig scenario = small_scenario();
  std::mt19937_64 rng(0);
  const GaussianPolicy policy(10, {8}, -3.0, 3.0, -0.5, rng);
  const EvalMetrics a = evaluate_policy(scenario, &policy, 3, 9);
  const EvalMetrics b = evaluate_policy(scenario, &policy, 3, 9);
  EXPECT_EQ(a.mean_flow, b.mean_flow);
  EXPECT_EQ(a.mean_reward, b.mean_reward);
  EXPECT_EQ(a.episodes, 3u);
  EXPECT_GT(a.fuel_per_vehicle_gal, 0.0);
  EXPECT_THROW(evaluate_policy(scenario, &policy, 0, 9), std::invalid_argument);
}

TEST(Evaluate, UncontrolledEquilibriumFlowIsEquilibriumVelocity) {
  ScenarioConfig scenario = small_scenario();
  scenario.initial.kind = InitialCondition::Kind::kEquilibrium;
  const EvalMetrics m = evaluate_policy(scenario, nullptr, 2, 0);
  const double v_eq = equilibrium_velocity(80.0 / 5 - scenario.idm.l, scenario.idm);
  EXPECT_NEAR(m.mean_flow, v_eq, 1e-9);
  EXPECT_EQ(m.collisions, 0u);
  EXPECT_NEAR(m.mean_jerk, 0.0, 1e-9);
}

}  // namespace
}  // namespace difftraffic

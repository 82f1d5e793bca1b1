#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "difftraffic/env.hpp"
#include "difftraffic/network.hpp"
#include "difftraffic/ppo.hpp"

namespace difftraffic {

struct IterationMetrics {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mean_r_vel = 0.0;
  double mean_r_mpg = 0.0;
  double mean_jerk_pen = 0.0;
  std::size_t collisions = 0;
  double wall_time_s = 0.0;
};

/// Bookkeeping of the perturbation bound over a whole run.
struct PerturbationAudit {
  std::size_t units_seen = 0;
  std::size_t units_perturbed = 0;
  std::size_t bound_violations = 0;
  /// Largest |epsilon * ds_da|_inf observed.
  double max_state_shift = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<IterationMetrics> log;
  std::optional<std::string> error;
  GaussianPolicy policy;
  PerturbationAudit audit;
  /// Flattened policy parameters after every update, for equivalence checks.
  std::vector<Eigen::VectorXd> parameter_trace;
};

struct AggregateRow {
  std::size_t iteration = 0;
  std::size_t seeds = 0;
  // (mean, std) over seeds for each logged metric.
  std::pair<double, double> mean_reward;
  std::pair<double, double> std_reward;
  std::pair<double, double> mean_r_vel;
  std::pair<double, double> mean_r_mpg;
  std::pair<double, double> mean_jerk_pen;
  std::pair<double, double> collisions;
};

struct TrainResult {
  std::vector<SeedRun> runs;
  std::vector<AggregateRow> aggregate;
};

struct TrainOptions {
  std::size_t jobs = 1;
  bool record_parameter_trace = false;
  std::function<void(const SeedRun&, const IterationMetrics&)> on_iteration;
};

/// Trains one seed: collect -> (diffppo: perturb) -> GAE -> PPO update.
SeedRun train_seed(const ScenarioConfig& scenario, const TrainConfig& cfg, std::uint64_t seed,
                   bool record_parameter_trace = false);

/// Runs every seed in `cfg.seeds` (up to `jobs` concurrently). A failing
/// seed is recorded in its SeedRun and the others continue.
TrainResult train(const ScenarioConfig& scenario, const TrainConfig& cfg,
                  const TrainOptions& options = {});

std::vector<AggregateRow> aggregate_runs(std::span<const SeedRun> runs);

void write_seed_log_csv(std::ostream& out, std::span<const IterationMetrics> log);
void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows);

struct EvalMetrics {
  double mean_flow = 0.0;
  double fuel_per_vehicle_gal = 0.0;
  double mean_jerk = 0.0;
  double mean_reward = 0.0;
  std::size_t collisions = 0;
  std::size_t episodes = 0;
};

/// Deterministic rollouts using the policy mean; with no policy every
/// vehicle (the controlled one included) follows IDM.
EvalMetrics evaluate_policy(const ScenarioConfig& scenario, const GaussianPolicy* policy,
                            std::size_t episodes, std::uint64_t seed);

}  // namespace difftraffic

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "difftraffic/rewards.hpp"
#include "difftraffic/traffic.hpp"

namespace difftraffic {

enum class ScenarioKind { kRing, kFigureEight };

struct InitialCondition {
  enum class Kind { kEquilibrium, kUniform };
  Kind kind = Kind::kUniform;
  /// Half-width of the uniform position noise (m); ignored for equilibrium.
  double sigma = 1.0;
};

/// The figure-eight is modeled as one closed loop whose coordinates
/// `crossing_a * L` and `crossing_b * L` are the same physical crossing.
struct FigureEightGeometry {
  double crossing_a = 0.25;
  double crossing_b = 0.75;
  double approach_window = 20.0;  // m before a crossing coordinate
  double conflict_length = 10.0;  // m past a crossing coordinate still occupied
  double b_max = 3.0;             // yield braking magnitude (m/s^2)
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::kRing;
  double track_length = 150.0;
  std::size_t num_vehicles = 14;
  std::size_t controlled_index = 0;
  IdmParams idm;
  StepConfig step;
  RewardWeights weights;
  FuelModel fuel;
  std::size_t horizon = 1000;
  InitialCondition initial;
  std::size_t warmup_steps = 1500;
  double collision_penalty = -50.0;
  FigureEightGeometry figure_eight;

  void validate() const;
  /// Ring default tuned to develop stop-and-go waves under all-IDM control.
  static ScenarioConfig unstable_ring();
  static ScenarioConfig figure_eight_default();
};

/// Normalized state: vehicles ordered from the controlled one backwards,
/// each contributing (position offset from the controlled vehicle / L, v / v0).
using Observation = Eigen::VectorXd;

struct ExperienceUnit {
  Observation s;
  double a = 0.0;
  double r = 0.0;
  Observation s_next;
  double dr_da = 0.0;
  /// d s_next / d a in observation coordinates.
  Eigen::VectorXd ds_da;
  bool done = false;
  /// The controlled vehicle was clipped or overridden; gradients are zero.
  bool gradient_cut = false;
};

struct StepInfo {
  std::vector<double> accelerations;
  std::vector<double> fuel_rates;
  std::vector<bool> overridden;
  RewardBreakdown reward;
  bool collision = false;
};

struct EnvStepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  ExperienceUnit unit;
  StepInfo info;
};

/// Per-vehicle yield overrides for the figure-eight crossing. A vehicle
/// approaching one crossing coordinate brakes when another vehicle occupies
/// the crossing from the other coordinate or will reach it sooner. Ties go
/// to the higher index. IDM vehicles receive min(IDM, -b_max); the
/// controlled vehicle receives -b_max and the caller combines it with the action.
std::vector<std::optional<double>> figure_eight_yield(const TrafficState& state,
                                                      const ScenarioConfig& config);

/// Episodic single-lane traffic environment with one controlled vehicle.
class TrafficEnv {
 public:
  explicit TrafficEnv(ScenarioConfig config);

  Observation reset(std::uint64_t seed);

  /// Advances one step. With no action the controlled vehicle follows IDM.
  EnvStepResult step(std::optional<double> action);

  Observation observe(const TrafficState& state) const;
  /// Maps a flattened-state direction to observation coordinates.
  Eigen::VectorXd state_direction_to_observation(const Eigen::VectorXd& direction) const;

  const TrafficState& state() const { return state_; }
  const ScenarioConfig& config() const { return config_; }
  std::size_t steps_taken() const { return steps_; }
  bool done() const { return done_; }
  std::size_t observation_size() const { return 2 * config_.num_vehicles; }

 private:
  ScenarioConfig config_;
  TrafficState state_;
  std::size_t steps_ = 0;
  double prev_action_ = 0.0;
  bool done_ = true;
};

/// Rollout trace CSV: step,vehicle,x,v,accel,fuel_rate,overridden
void write_trace_header(std::ostream& out);
void write_trace_rows(std::ostream& out, std::size_t step_index, const TrafficState& state,
                      const StepInfo& info);

}  // namespace difftraffic

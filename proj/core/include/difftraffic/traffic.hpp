#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace difftraffic {

/// Raised when a traffic state violates its invariants (overlap, bad index).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Intelligent Driver Model parameters. `delta_exp` is the free-road
/// acceleration exponent; `s0` is the jam distance.
struct IdmParams {
  double v0 = 30.0;  // desired velocity (m/s)
  double T = 1.0;    // safe time headway (s)
  double a = 1.0;    // maximum acceleration (m/s^2)
  double b = 1.5;    // comfortable deceleration (m/s^2)
  double delta_exp = 4.0;
  double s0 = 2.0;  // minimum gap (m)
  double l = 5.0;   // vehicle length (m)

  void validate() const;
};

struct VehicleState {
  double x = 0.0;
  double v = 0.0;

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

struct OpenRoad {
  friend bool operator==(const OpenRoad&, const OpenRoad&) = default;
};

struct Ring {
  double length = 0.0;
  friend bool operator==(const Ring&, const Ring&) = default;
};

using Topology = std::variant<OpenRoad, Ring>;

/// Ordered platoon. Index 0 is the front vehicle; vehicle i follows i-1
/// (and vehicle 0 follows N-1 on a ring).
struct TrafficState {
  std::vector<VehicleState> vehicles;
  Topology topology = OpenRoad{};
  std::optional<std::size_t> controlled_index;

  std::size_t size() const { return vehicles.size(); }
  bool is_ring() const { return std::holds_alternative<Ring>(topology); }
  /// Ring length, or 0 for an open road.
  double ring_length() const;
  /// Leader of vehicle i, or nullopt for the front of an open platoon.
  std::optional<std::size_t> leader(std::size_t i) const;

  friend bool operator==(const TrafficState&, const TrafficState&) = default;
};

struct StepConfig {
  double dt = 0.1;
  double alpha_min = -3.0;
  double alpha_max = 3.0;

  void validate() const;
};

/// How a vehicle's acceleration was chosen during a step.
enum class DriveMode { kIdm, kAction, kOverride };

/// Per-vehicle bookkeeping of one step, consumed by the step Jacobian.
struct StepFlags {
  std::vector<bool> clipped;
  std::vector<DriveMode> modes;

  std::size_t size() const { return clipped.size(); }
  /// True if no gradient flows through vehicle i this step.
  bool gradient_cut(std::size_t i) const {
    return clipped[i] || modes[i] == DriveMode::kOverride;
  }
  /// Flags for a plain all-IDM step with nothing clipped.
  static StepFlags all_idm(std::size_t n) {
    return {std::vector<bool>(n, false), std::vector<DriveMode>(n, DriveMode::kIdm)};
  }
};

struct StepResult {
  TrafficState next;
  /// Applied accelerations before velocity clipping.
  std::vector<double> accelerations;
  StepFlags flags;
  /// Set when any post-step headway is non-positive.
  bool collision = false;
};

/// Bumper-to-bumper gap between vehicle i and its leader.
double headway(const TrafficState& state, std::size_t i, const IdmParams& params);

/// Same as headway() but returns the raw (possibly non-positive) gap.
double raw_headway(const TrafficState& state, std::size_t i, const IdmParams& params);

/// Desired dynamic gap s*(v, dv).
double desired_gap(double v, double v_leader, const IdmParams& params);

double idm_acceleration(double v, double v_leader, double s, const IdmParams& params);

/// IDM with the interaction term dropped (no leader).
double free_road_acceleration(double v, const IdmParams& params);

/// IDM acceleration of vehicle i within the state.
double vehicle_acceleration(const TrafficState& state, std::size_t i, const IdmParams& params);

StepResult step(const TrafficState& state, const IdmParams& params, const StepConfig& cfg,
                std::optional<double> action = std::nullopt);

/// Step with optional per-vehicle acceleration overrides. An override
/// replaces whatever the IDM or the action would have produced.
StepResult step(const TrafficState& state, const IdmParams& params, const StepConfig& cfg,
                std::optional<double> action, std::span<const std::optional<double>> overrides);

/// Velocity of uniform flow at the given gap (zero IDM acceleration).
double equilibrium_velocity(double gap, const IdmParams& params);

/// Evenly spaced ring at the equilibrium velocity.
TrafficState equilibrium_state(std::size_t n, const IdmParams& params, const Ring& ring);

/// Checks ordering, ring bounds and positive headways.
void validate_state(const TrafficState& state, const IdmParams& params);

/// Wraps a position into [0, length).
double wrap_position(double x, double length);

/// [x_0, v_0, x_1, v_1, ...]
Eigen::VectorXd flatten(const TrafficState& state);
TrafficState unflatten(const Eigen::VectorXd& flat, const TrafficState& like);

}  // namespace difftraffic

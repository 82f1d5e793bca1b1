#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "difftraffic/traffic.hpp"

namespace difftraffic {

/// Block lower-bidiagonal Jacobian over the flattened state
/// [x_0, v_0, ..., x_{N-1}, v_{N-1}].
///
/// Row block i depends only on vehicle i (`diag[i]`) and on its leader
/// (`sub[i]`, placed at the leader's column block). On a ring the leader
/// of vehicle 0 is vehicle N-1, which puts `sub[0]` in the top-right corner.
/// On an open road `sub[0]` is unused and stays zero.
struct BlockJacobian {
  std::vector<Eigen::Matrix2d> diag;
  std::vector<Eigen::Matrix2d> sub;
  std::vector<std::optional<std::size_t>> leaders;

  std::size_t size() const { return diag.size(); }
  Eigen::MatrixXd dense() const;
  /// J * x without materializing J.
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

/// Partials of (dx/dt, dv/dt) for every vehicle under pure IDM control.
BlockJacobian dynamics_jacobian(const TrafficState& state, const IdmParams& params);

/// Same as above, honoring how each vehicle was driven in a step: an
/// action-driven vehicle has no state dependence in its acceleration, and
/// clipped or overridden vehicles carry all-zero blocks.
BlockJacobian dynamics_jacobian(const TrafficState& state, const IdmParams& params,
                                const StepFlags& flags);

/// Jacobian of the explicit-Euler step map, I + dt * J_dyn, with the
/// velocity row of every clipped or overridden vehicle zeroed.
BlockJacobian step_jacobian(const TrafficState& state, const IdmParams& params,
                            const StepConfig& cfg, const StepFlags& flags);

/// Central-difference Jacobian of the full step map. Ring positions are
/// differenced modulo the ring length.
Eigen::MatrixXd finite_difference_jacobian(
    const TrafficState& state, const IdmParams& params, const StepConfig& cfg, double h,
    std::optional<double> action = std::nullopt,
    std::span<const std::optional<double>> overrides = {});

/// False when `h` is too small for the state's magnitude to yield
/// meaningful differences in double precision.
bool finite_difference_resolvable(const TrafficState& state, double h);

struct ActionSensitivity {
  Eigen::VectorXd d_next_state_d_action;
  double d_reward_d_action = 0.0;
};

/// Sensitivity of the post-step state and reward to the controlled action.
/// `direct_reward_grad` carries partials of the reward that depend on the
/// action itself rather than on the next state (fuel, jerk).
ActionSensitivity action_sensitivity(const StepFlags& flags, std::size_t controlled,
                                     const StepConfig& cfg,
                                     const Eigen::VectorXd& reward_grad_state,
                                     double direct_reward_grad = 0.0);

/// Convenience overload that runs the step to obtain the clip flags.
ActionSensitivity action_sensitivity(const TrafficState& state, const IdmParams& params,
                                     const StepConfig& cfg, double action,
                                     const Eigen::VectorXd& reward_grad_state);

struct JacobianBenchmarkReport {
  std::size_t n = 0;
  std::size_t iters = 0;
  double analytical_s = 0.0;
  double finite_difference_s = 0.0;
  double speedup = 0.0;
  /// Sum over evaluated Jacobian entries; identical streams give identical checksums.
  double analytical_checksum = 0.0;
};

/// Random open-road platoon with interior (unclipped, positive-gap) dynamics.
TrafficState random_platoon(std::size_t n, const IdmParams& params, const StepConfig& cfg,
                            std::uint64_t seed);

/// Random ring configuration, same guarantees as random_platoon().
TrafficState random_ring(std::size_t n, const IdmParams& params, const StepConfig& cfg,
                         std::uint64_t seed);

/// Times `iters` analytical step-Jacobian evaluations against the
/// finite-difference oracle on the same seeded stream of platoons.
JacobianBenchmarkReport jacobian_benchmark(std::size_t n, std::size_t iters,
                                           std::uint64_t seed = 0);

void write_benchmark_csv(std::ostream& out, std::span<const JacobianBenchmarkReport> rows);

}  // namespace difftraffic

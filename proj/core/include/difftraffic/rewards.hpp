#pragma once

#include <span>

#include <Eigen/Core>

#include "difftraffic/traffic.hpp"

namespace difftraffic {

inline constexpr double kMetersPerMile = 1609.0;

struct RewardWeights {
  double alpha = 1.0;   // flow (mean velocity)
  double beta = 0.1;    // miles per gallon
  double lambda = 1.0;  // jerk penalty

  void validate() const;
};

/// Fuel rate in gallons per second:
///   max(g_idle, c0 + c1 v + c2 v^2 + c3 v^3 + c4 v max(accel, 0)).
struct FuelModel {
  double c0 = 1.64e-4;
  double c1 = 5e-6;
  double c2 = 0.0;
  double c3 = 1e-8;
  double c4 = 2e-5;
  double g_idle = 1.64e-4;

  void validate() const;
};

struct FuelPartials {
  double d_v = 0.0;
  double d_accel = 0.0;
};

double fuel_rate(double v, double accel, const FuelModel& model);
/// Derivatives of fuel_rate() on the active branch (zero on the idle floor).
FuelPartials fuel_rate_partials(double v, double accel, const FuelModel& model);

double r_vel(const TrafficState& state);
double r_mpg(const TrafficState& state, std::span<const double> accelerations,
             const FuelModel& model);
double jerk_penalty(double a_t, double a_prev);

struct RewardBreakdown {
  double r_vel = 0.0;
  double r_mpg = 0.0;
  double jerk = 0.0;
  double total = 0.0;
};

RewardBreakdown reward_components(const TrafficState& state, std::span<const double> accelerations,
                                  double a_t, double a_prev, const RewardWeights& weights,
                                  const FuelModel& model);

double r_comb(const TrafficState& state, std::span<const double> accelerations, double a_t,
              double a_prev, const RewardWeights& weights, const FuelModel& model);

/// Gradient of r_comb with respect to the flattened state, holding the
/// accelerations and actions fixed.
Eigen::VectorXd reward_grad_state(const TrafficState& state, std::span<const double> accelerations,
                                  const RewardWeights& weights, const FuelModel& model);

/// Partial of r_comb with respect to the acceleration of vehicle i through
/// its fuel rate, holding the state fixed.
double reward_grad_acceleration(const TrafficState& state, std::span<const double> accelerations,
                                std::size_t i, const RewardWeights& weights,
                                const FuelModel& model);

/// Partial of -lambda * |a_t - a_prev| with respect to a_t (zero at the kink).
double jerk_grad(double a_t, double a_prev, const RewardWeights& weights);

}  // namespace difftraffic

#include "difftraffic/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace difftraffic {

void RewardWeights::validate() const {
  const bool finite = std::isfinite(alpha) && std::isfinite(beta) && std::isfinite(lambda);
  if (!finite || alpha < 0 || beta < 0 || lambda < 0) {
    throw std::invalid_argument("reward weights must be finite and non-negative");
  }
}

void FuelModel::validate() const {
  if (!(g_idle > 0)) throw std::invalid_argument("fuel model idle floor must be positive");
  for (double c : {c0, c1, c2, c3, c4}) {
    if (!std::isfinite(c)) throw std::invalid_argument("fuel model coefficients must be finite");
  }
}

namespace {

double fuel_polynomial(double v, double accel, const FuelModel& m) {
  return m.c0 + v * (m.c1 + v * (m.c2 + v * m.c3)) + m.c4 * v * std::max(accel, 0.0);
}

void require_sizes(const TrafficState& state, std::span<const double> accelerations) {
  if (state.size() == 0) throw std::invalid_argument("reward of an empty state");
  if (accelerations.size() != state.size()) {
    throw std::invalid_argument("acceleration count does not match vehicle count");
  }
}

}  // namespace

double fuel_rate(double v, double accel, const FuelModel& model) {
  return std::max(model.g_idle, fuel_polynomial(v, accel, model));
}

FuelPartials fuel_rate_partials(double v, double accel, const FuelModel& m) {
  if (!(fuel_polynomial(v, accel, m) > m.g_idle)) return {};
  const double pos = std::max(accel, 0.0);
  FuelPartials d;
  d.d_v = m.c1 + v * (2.0 * m.c2 + 3.0 * v * m.c3) + m.c4 * pos;
  d.d_accel = accel > 0.0 ? m.c4 * v : 0.0;
  return d;
}

double r_vel(const TrafficState& state) {
  if (state.size() == 0) throw std::invalid_argument("reward of an empty state");
  double sum = 0.0;
  for (const auto& veh : state.vehicles) sum += veh.v;
  return sum / static_cast<double>(state.size());
}

double r_mpg(const TrafficState& state, std::span<const double> accelerations,
             const FuelModel& model) {
  require_sizes(state, accelerations);
  double sum = 0.0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const double g = fuel_rate(state.vehicles[i].v, accelerations[i], model);
    if (!(g > 0)) throw std::domain_error("fuel rate must be positive");
    sum += state.vehicles[i].v / g;
  }
  return sum / (kMetersPerMile * static_cast<double>(state.size()));
}

double jerk_penalty(double a_t, double a_prev) { return std::abs(a_t - a_prev); }

RewardBreakdown reward_components(const TrafficState& state, std::span<const double> accelerations,
                                  double a_t, double a_prev, const RewardWeights& weights,
                                  const FuelModel& model) {
  RewardBreakdown out;
  out.r_vel = r_vel(state);
  out.r_mpg = r_mpg(state, accelerations, model);
  out.jerk = jerk_penalty(a_t, a_prev);
  out.total = weights.alpha * out.r_vel + weights.beta * out.r_mpg - weights.lambda * out.jerk;
  return out;
}

double r_comb(const TrafficState& state, std::span<const double> accelerations, double a_t,
              double a_prev, const RewardWeights& weights, const FuelModel& model) {
  return reward_components(state, accelerations, a_t, a_prev, weights, model).total;
}

Eigen::VectorXd reward_grad_state(const TrafficState& state, std::span<const double> accelerations,
                                  const RewardWeights& weights, const FuelModel& model) {
  require_sizes(state, accelerations);
  const std::size_t n = state.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n));
  for (std::size_t i = 0; i < n; ++i) {
    const double v = state.vehicles[i].v;
    const double g = fuel_rate(v, accelerations[i], model);
    const double dg_dv = fuel_rate_partials(v, accelerations[i], model).d_v;
    const double d_mpg = inv_n / kMetersPerMile * (g - v * dg_dv) / (g * g);
    grad[static_cast<Eigen::Index>(2 * i + 1)] = weights.alpha * inv_n + weights.beta * d_mpg;
  }
  return grad;
}

double reward_grad_acceleration(const TrafficState& state, std::span<const double> accelerations,
                                std::size_t i, const RewardWeights& weights,
                                const FuelModel& model) {
  require_sizes(state, accelerations);
  const double v = state.vehicles[i].v;
  const double g = fuel_rate(v, accelerations[i], model);
  const double dg_da = fuel_rate_partials(v, accelerations[i], model).d_accel;
  return -weights.beta * v * dg_da / (g * g * kMetersPerMile * static_cast<double>(state.size()));
}

double jerk_grad(double a_t, double a_prev, const RewardWeights& weights) {
  const double diff = a_t - a_prev;
  if (diff == 0.0) return 0.0;
  return diff > 0.0 ? -weights.lambda : weights.lambda;
}

}  // namespace difftraffic

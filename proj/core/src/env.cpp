#include "difftraffic/env.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include "difftraffic/jacobian.hpp"

namespace difftraffic {

void ScenarioConfig::validate() const {
  idm.validate();
  step.validate();
  weights.validate();
  fuel.validate();
  if (num_vehicles < 1) throw std::invalid_argument("scenario needs at least one vehicle");
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (controlled_index >= num_vehicles) throw std::invalid_argument("controlled index out of range");
  if (!(track_length > 0)) throw std::invalid_argument("track length must be positive");
  if (!(track_length / static_cast<double>(num_vehicles) > idm.l + idm.s0)) {
    throw std::invalid_argument("infeasible spacing: L / N must exceed l + s0");
  }
  if (initial.kind == InitialCondition::Kind::kUniform && !(initial.sigma >= 0)) {
    throw std::invalid_argument("initial perturbation must be non-negative");
  }
  if (kind == ScenarioKind::kFigureEight) {
    const auto& g = figure_eight;
    const bool ok = g.crossing_a >= 0 && g.crossing_a < 1 && g.crossing_b >= 0 &&
                    g.crossing_b < 1 && g.crossing_a != g.crossing_b && g.approach_window > 0 &&
                    g.conflict_length > 0 && g.b_max > 0;
    if (!ok) throw std::invalid_argument("invalid figure-eight geometry");
  }
}

ScenarioConfig ScenarioConfig::unstable_ring() { return ScenarioConfig{}; }

ScenarioConfig ScenarioConfig::figure_eight_default() {
  ScenarioConfig cfg;
  cfg.kind = ScenarioKind::kFigureEight;
  cfg.track_length = 240.0;
  cfg.num_vehicles = 14;
  return cfg;
}

namespace {

struct CrossingView {
  double distance_ahead;  // front bumper to the crossing coordinate
  double past;            // distance the front bumper is beyond it
};

CrossingView view(double x, double crossing, double length) {
  return {wrap_position(crossing - x, length), wrap_position(x - crossing, length)};
}

}  // namespace

std::vector<std::optional<double>> figure_eight_yield(const TrafficState& state,
                                                      const ScenarioConfig& config) {
  const std::size_t n = state.size();
  std::vector<std::optional<double>> out(n);
  if (config.kind != ScenarioKind::kFigureEight || n < 2) return out;

  const auto& geo = config.figure_eight;
  const double length = config.track_length;
  const double crossings[2] = {geo.crossing_a * length, geo.crossing_b * length};
  constexpr double kMinSpeed = 0.1;

  auto approaching = [&](std::size_t i, int side) {
    const double d = view(state.vehicles[i].x, crossings[side], length).distance_ahead;
    return d > 0 && d <= geo.approach_window;
  };
  auto occupying = [&](std::size_t i, int side) {
    return view(state.vehicles[i].x, crossings[side], length).past < geo.conflict_length;
  };
  auto time_to = [&](std::size_t i, int side) {
    const double d = view(state.vehicles[i].x, crossings[side], length).distance_ahead;
    return d / std::max(state.vehicles[i].v, kMinSpeed);
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (int side = 0; side < 2; ++side) {
      if (!approaching(i, side)) continue;
      const int other = 1 - side;
      const double t_i = time_to(i, side);
      bool yield = false;
      for (std::size_t j = 0; j < n && !yield; ++j) {
        if (j == i) continue;
        if (occupying(j, other)) {
          yield = true;
        } else if (approaching(j, other)) {
          const double t_j = time_to(j, other);
          yield = t_j < t_i || (t_j == t_i && i < j);
        }
      }
      if (!yield) continue;
      double accel = -geo.b_max;
      if (!state.controlled_index || i != *state.controlled_index) {
        accel = std::min(accel, vehicle_acceleration(state, i, config.idm));
      }
      out[i] = accel;
    }
  }
  return out;
}

TrafficEnv::TrafficEnv(ScenarioConfig config) : config_(std::move(config)) { config_.validate(); }

Observation TrafficEnv::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Ring ring{config_.track_length};
  state_ = equilibrium_state(config_.num_vehicles, config_.idm, ring);
  if (config_.initial.kind == InitialCondition::Kind::kUniform && config_.initial.sigma > 0) {
    std::uniform_real_distribution<double> noise(-config_.initial.sigma, config_.initial.sigma);
    const TrafficState base = state_;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::invalid_argument("initial perturbation too large for spacing");
      state_ = base;
      for (auto& veh : state_.vehicles) veh.x = wrap_position(veh.x + noise(rng), ring.length);
      bool ok = true;
      for (std::size_t i = 0; i < state_.size() && ok; ++i) {
        ok = raw_headway(state_, i, config_.idm) > 0;
      }
      if (ok) break;
    }
  }
  state_.controlled_index = config_.controlled_index;

  prev_action_ = 0.0;
  for (std::size_t k = 0; k < config_.warmup_steps; ++k) {
    const auto overrides = figure_eight_yield(state_, config_);
    StepResult res = difftraffic::step(state_, config_.idm, config_.step, std::nullopt, overrides);
    if (res.collision) throw std::runtime_error("collision during warmup");
    prev_action_ = res.accelerations[config_.controlled_index];
    state_ = std::move(res.next);
  }
  steps_ = 0;
  done_ = false;
  return observe(state_);
}

EnvStepResult TrafficEnv::step(std::optional<double> action) {
  if (done_) throw std::logic_error("step called on a finished episode; call reset first");
  const std::size_t c = config_.controlled_index;
  const StepConfig& sc = config_.step;

  std::optional<double> applied_action;
  if (action) {
    if (!std::isfinite(*action)) throw std::invalid_argument("action must be finite");
    applied_action = std::clamp(*action, sc.alpha_min, sc.alpha_max);
  }

  auto overrides = figure_eight_yield(state_, config_);
  if (overrides[c] && applied_action) overrides[c] = std::min(*overrides[c], *applied_action);

  const Observation obs = observe(state_);
  StepResult res = difftraffic::step(state_, config_.idm, sc, applied_action, overrides);

  const double a_t = applied_action ? *applied_action : res.accelerations[c];
  EnvStepResult out;
  StepInfo& info = out.info;
  info.accelerations = res.accelerations;
  info.overridden.resize(res.flags.size());
  info.fuel_rates.resize(res.flags.size());
  for (std::size_t i = 0; i < res.flags.size(); ++i) {
    info.overridden[i] = res.flags.modes[i] == DriveMode::kOverride;
    info.fuel_rates[i] = fuel_rate(res.next.vehicles[i].v, res.accelerations[i], config_.fuel);
  }
  info.reward = reward_components(res.next, res.accelerations, a_t, prev_action_, config_.weights,
                                  config_.fuel);
  info.collision = res.collision;

  double reward = info.reward.total;
  if (res.collision) reward += config_.collision_penalty;

  ExperienceUnit& unit = out.unit;
  unit.s = obs;
  unit.a = a_t;
  unit.r = reward;
  unit.gradient_cut = res.flags.gradient_cut(c);

  const Eigen::VectorXd grad_state =
      reward_grad_state(res.next, res.accelerations, config_.weights, config_.fuel);
  const double direct = reward_grad_acceleration(res.next, res.accelerations, c, config_.weights,
                                                 config_.fuel) +
                        jerk_grad(a_t, prev_action_, config_.weights);
  const ActionSensitivity sens = action_sensitivity(res.flags, c, sc, grad_state, direct);
  unit.ds_da = state_direction_to_observation(sens.d_next_state_d_action);
  unit.dr_da = sens.d_reward_d_action;

  state_ = std::move(res.next);
  ++steps_;
  prev_action_ = a_t;
  done_ = res.collision || steps_ >= config_.horizon;

  unit.s_next = observe(state_);
  unit.done = done_;
  out.observation = unit.s_next;
  out.reward = reward;
  out.done = done_;
  return out;
}

Observation TrafficEnv::observe(const TrafficState& state) const {
  const std::size_t n = state.size();
  const std::size_t c = config_.controlled_index;
  const double length = config_.track_length;
  const double xc = state.vehicles[c].x;
  Observation obs(static_cast<Eigen::Index>(2 * n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& veh = state.vehicles[(c + k) % n];
    obs[static_cast<Eigen::Index>(2 * k)] = wrap_position(veh.x - xc, length) / length;
    obs[static_cast<Eigen::Index>(2 * k + 1)] = veh.v / config_.idm.v0;
  }
  return obs;
}

Eigen::VectorXd TrafficEnv::state_direction_to_observation(
    const Eigen::VectorXd& direction) const {
  const std::size_t n = config_.num_vehicles;
  const std::size_t c = config_.controlled_index;
  const double dxc = direction[static_cast<Eigen::Index>(2 * c)];
  Eigen::VectorXd out(static_cast<Eigen::Index>(2 * n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto j = static_cast<Eigen::Index>((c + k) % n);
    out[static_cast<Eigen::Index>(2 * k)] =
        k == 0 ? 0.0 : (direction[2 * j] - dxc) / config_.track_length;
    out[static_cast<Eigen::Index>(2 * k + 1)] = direction[2 * j + 1] / config_.idm.v0;
  }
  return out;
}

void write_trace_header(std::ostream& out) {
  out << "step,vehicle,x,v,accel,fuel_rate,overridden\n";
}

void write_trace_rows(std::ostream& out, std::size_t step_index, const TrafficState& state,
                      const StepInfo& info) {
  const auto old_precision = out.precision(12);
  for (std::size_t i = 0; i < state.size(); ++i) {
    out << step_index << ',' << i << ',' << state.vehicles[i].x << ',' << state.vehicles[i].v << ','
        << info.accelerations[i] << ',' << info.fuel_rates[i] << ','
        << (info.overridden[i] ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

}  // namespace difftraffic

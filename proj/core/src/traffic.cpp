#include "difftraffic/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace difftraffic {

namespace {

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument(std::string(what) + " must be finite");
  }
}

}  // namespace

void IdmParams::validate() const {
  const bool ok = v0 > 0 && T >= 0 && a > 0 && b > 0 && s0 > 0 && l > 0 && delta_exp > 0 &&
                  std::isfinite(v0) && std::isfinite(T) && std::isfinite(a) && std::isfinite(b) &&
                  std::isfinite(s0) && std::isfinite(l) && std::isfinite(delta_exp);
  if (!ok) throw std::invalid_argument("invalid IDM parameters");
}

void StepConfig::validate() const {
  if (!(dt > 0) || !std::isfinite(dt)) throw std::invalid_argument("dt must be positive");
  if (!(alpha_min < alpha_max)) throw std::invalid_argument("alpha_min must be below alpha_max");
}

double TrafficState::ring_length() const {
  if (const auto* ring = std::get_if<Ring>(&topology)) return ring->length;
  return 0.0;
}

std::optional<std::size_t> TrafficState::leader(std::size_t i) const {
  const std::size_t n = vehicles.size();
  if (i >= n) throw StateError("vehicle index out of range");
  if (is_ring()) return i == 0 ? n - 1 : i - 1;
  if (i == 0) return std::nullopt;
  return i - 1;
}

double wrap_position(double x, double length) {
  double w = std::fmod(x, length);
  if (w < 0) w += length;
  // fmod of a tiny negative value plus length can round up to length.
  if (w >= length) w = 0.0;
  return w;
}

double raw_headway(const TrafficState& state, std::size_t i, const IdmParams& params) {
  const auto lead = state.leader(i);
  if (!lead) throw StateError("the front vehicle of an open road has no headway");
  const double xl = state.vehicles[*lead].x;
  const double x = state.vehicles[i].x;
  if (state.is_ring()) {
    const double length = state.ring_length();
    // A lone vehicle on a ring follows itself one lap ahead.
    const double dist = (*lead == i) ? length : wrap_position(xl - x, length);
    return dist - params.l;
  }
  return xl - x - params.l;
}

double headway(const TrafficState& state, std::size_t i, const IdmParams& params) {
  const double s = raw_headway(state, i, params);
  if (!(s > 0)) {
    throw StateError("non-positive headway for vehicle " + std::to_string(i));
  }
  return s;
}

double desired_gap(double v, double v_leader, const IdmParams& p) {
  return p.s0 + v * p.T + v * (v - v_leader) / (2.0 * std::sqrt(p.a * p.b));
}

double free_road_acceleration(double v, const IdmParams& p) {
  require_finite(v, "velocity");
  return p.a * (1.0 - std::pow(v / p.v0, p.delta_exp));
}

double idm_acceleration(double v, double v_leader, double s, const IdmParams& p) {
  require_finite(v, "velocity");
  require_finite(v_leader, "leader velocity");
  require_finite(s, "headway");
  if (!(s > 0)) throw std::invalid_argument("headway must be positive");
  const double ratio = desired_gap(v, v_leader, p) / s;
  return p.a * (1.0 - std::pow(v / p.v0, p.delta_exp) - ratio * ratio);
}

double vehicle_acceleration(const TrafficState& state, std::size_t i, const IdmParams& params) {
  const auto lead = state.leader(i);
  if (!lead) return free_road_acceleration(state.vehicles[i].v, params);
  return idm_acceleration(state.vehicles[i].v, state.vehicles[*lead].v, headway(state, i, params),
                          params);
}

StepResult step(const TrafficState& state, const IdmParams& params, const StepConfig& cfg,
                std::optional<double> action) {
  return step(state, params, cfg, action, {});
}

StepResult step(const TrafficState& state, const IdmParams& params, const StepConfig& cfg,
                std::optional<double> action, std::span<const std::optional<double>> overrides) {
  const std::size_t n = state.size();
  if (action && !state.controlled_index) {
    throw std::invalid_argument("action given but no controlled vehicle");
  }
  if (!overrides.empty() && overrides.size() != n) {
    throw std::invalid_argument("override count does not match vehicle count");
  }

  StepResult out;
  out.next = state;
  out.accelerations.resize(n);
  out.flags = StepFlags::all_idm(n);

  for (std::size_t i = 0; i < n; ++i) {
    double accel = 0.0;
    if (!overrides.empty() && overrides[i]) {
      accel = *overrides[i];
      out.flags.modes[i] = DriveMode::kOverride;
    } else if (action && i == *state.controlled_index) {
      require_finite(*action, "action");
      accel = std::clamp(*action, cfg.alpha_min, cfg.alpha_max);
      out.flags.modes[i] = DriveMode::kAction;
    } else {
      accel = vehicle_acceleration(state, i, params);
    }
    out.accelerations[i] = accel;
  }

  const double length = state.ring_length();
  for (std::size_t i = 0; i < n; ++i) {
    const VehicleState& cur = state.vehicles[i];
    VehicleState& nxt = out.next.vehicles[i];
    // Position advances with the pre-update velocity.
    nxt.x = cur.x + cur.v * cfg.dt;
    if (state.is_ring()) nxt.x = wrap_position(nxt.x, length);
    const double v = cur.v + out.accelerations[i] * cfg.dt;
    if (v < 0.0) {
      nxt.v = 0.0;
      out.flags.clipped[i] = true;
    } else {
      nxt.v = v;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!out.next.leader(i)) continue;
    if (!(raw_headway(out.next, i, params) > 0)) {
      out.collision = true;
      break;
    }
  }
  return out;
}

double equilibrium_velocity(double gap, const IdmParams& params) {
  if (!(gap > params.s0)) throw std::invalid_argument("gap must exceed the minimum gap");
  auto residual = [&](double v) { return idm_acceleration(v, v, gap, params); };
  double lo = 0.0;
  double hi = params.v0;
  if (!(residual(lo) > 0.0 && residual(hi) < 0.0)) {
    throw std::domain_error("no equilibrium velocity in [0, v0]");
  }
  // Bisect to full double resolution.
  while (true) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (residual(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::abs(residual(lo)) <= std::abs(residual(hi)) ? lo : hi;
}

TrafficState equilibrium_state(std::size_t n, const IdmParams& params, const Ring& ring) {
  params.validate();
  if (n == 0) throw std::invalid_argument("need at least one vehicle");
  if (!(ring.length > 0)) throw std::invalid_argument("ring length must be positive");
  const double spacing = ring.length / static_cast<double>(n);
  if (!(spacing > params.l + params.s0)) {
    throw std::invalid_argument("ring too short: spacing must exceed l + s0");
  }
  const double v_eq = equilibrium_velocity(spacing - params.l, params);

  TrafficState state;
  state.topology = ring;
  state.vehicles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    state.vehicles[i] = {wrap_position(-static_cast<double>(i) * spacing, ring.length), v_eq};
  }
  return state;
}

void validate_state(const TrafficState& state, const IdmParams& params) {
  const std::size_t n = state.size();
  if (n == 0) throw StateError("empty traffic state");
  if (state.controlled_index && *state.controlled_index >= n) {
    throw StateError("controlled index out of range");
  }
  for (const auto& veh : state.vehicles) {
    if (!std::isfinite(veh.x) || !std::isfinite(veh.v)) throw StateError("non-finite vehicle state");
    if (veh.v < 0) throw StateError("negative velocity");
  }
  if (state.is_ring()) {
    const double length = state.ring_length();
    if (!(length > 0)) throw StateError("ring length must be positive");
    double lap = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = state.vehicles[i].x;
      if (x < 0 || x >= length) throw StateError("ring position outside [0, L)");
      lap += headway(state, i, params) + params.l;
    }
    // Leader ordering must wind around the ring exactly once.
    if (n > 1 && std::abs(lap - length) > 1e-6 * length) {
      throw StateError("vehicle order inconsistent with the ring leader relation");
    }
  } else {
    for (std::size_t i = 1; i < n; ++i) headway(state, i, params);
  }
}

Eigen::VectorXd flatten(const TrafficState& state) {
  Eigen::VectorXd flat(2 * state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    flat[2 * i] = state.vehicles[i].x;
    flat[2 * i + 1] = state.vehicles[i].v;
  }
  return flat;
}

TrafficState unflatten(const Eigen::VectorXd& flat, const TrafficState& like) {
  if (static_cast<std::size_t>(flat.size()) != 2 * like.size()) {
    throw std::invalid_argument("flat state has the wrong length");
  }
  TrafficState out = like;
  for (std::size_t i = 0; i < like.size(); ++i) {
    out.vehicles[i] = {flat[2 * i], flat[2 * i + 1]};
  }
  return out;
}

}  // namespace difftraffic

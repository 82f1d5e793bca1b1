#include "difftraffic/jacobian.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>

namespace difftraffic {

Eigen::MatrixXd BlockJacobian::dense() const {
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.block<2, 2>(2 * i, 2 * i) += diag[i];
    if (const auto& lead = leaders[i]) {
      out.block<2, 2>(2 * i, 2 * static_cast<Eigen::Index>(*lead)) += sub[i];
    }
  }
  return out;
}

Eigen::VectorXd BlockJacobian::apply(const Eigen::VectorXd& x) const {
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::VectorXd y(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector2d row = diag[i] * x.segment<2>(2 * i);
    if (const auto& lead = leaders[i]) {
      row += sub[i] * x.segment<2>(2 * static_cast<Eigen::Index>(*lead));
    }
    y.segment<2>(2 * i) = row;
  }
  return y;
}

namespace {

struct IdmPartials {
  double d_x = 0.0;
  double d_v = 0.0;
  double d_x_leader = 0.0;
  double d_v_leader = 0.0;
};

double free_road_dv(double v, const IdmParams& p) {
  return -p.a * p.delta_exp * std::pow(v / p.v0, p.delta_exp - 1.0) / p.v0;
}

IdmPartials idm_partials(const TrafficState& state, std::size_t i, const IdmParams& p) {
  IdmPartials out;
  const double v = state.vehicles[i].v;
  out.d_v = free_road_dv(v, p);
  const auto lead = state.leader(i);
  if (!lead) return out;

  const double vl = state.vehicles[*lead].v;
  const double s = headway(state, i, p);
  const double sqrt_ab = std::sqrt(p.a * p.b);
  const double s_star = desired_gap(v, vl, p);
  const double s2 = s * s;

  out.d_x = -2.0 * p.a * s_star * s_star / (s2 * s);
  out.d_x_leader = -out.d_x;
  out.d_v += -2.0 * p.a / s2 * (p.T + (2.0 * v - vl) / (2.0 * sqrt_ab)) * s_star;
  out.d_v_leader = 2.0 * p.a * s_star * v / (2.0 * s2 * sqrt_ab);
  return out;
}

BlockJacobian empty_jacobian(const TrafficState& state) {
  const std::size_t n = state.size();
  BlockJacobian jac;
  jac.diag.assign(n, Eigen::Matrix2d::Zero());
  jac.sub.assign(n, Eigen::Matrix2d::Zero());
  jac.leaders.resize(n);
  for (std::size_t i = 0; i < n; ++i) jac.leaders[i] = state.leader(i);
  return jac;
}

}  // namespace

BlockJacobian dynamics_jacobian(const TrafficState& state, const IdmParams& params) {
  return dynamics_jacobian(state, params, StepFlags::all_idm(state.size()));
}

BlockJacobian dynamics_jacobian(const TrafficState& state, const IdmParams& params,
                                const StepFlags& flags) {
  if (flags.size() != state.size() || flags.modes.size() != state.size()) {
    throw std::invalid_argument("step flags do not match vehicle count");
  }
  BlockJacobian jac = empty_jacobian(state);
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (flags.gradient_cut(i)) continue;
    jac.diag[i](0, 1) = 1.0;  // dx/dt = v
    if (flags.modes[i] == DriveMode::kAction) continue;
    const IdmPartials d = idm_partials(state, i, params);
    jac.diag[i](1, 0) = d.d_x;
    jac.diag[i](1, 1) = d.d_v;
    if (jac.leaders[i]) {
      jac.sub[i](1, 0) = d.d_x_leader;
      jac.sub[i](1, 1) = d.d_v_leader;
    }
  }
  return jac;
}

BlockJacobian step_jacobian(const TrafficState& state, const IdmParams& params,
                            const StepConfig& cfg, const StepFlags& flags) {
  BlockJacobian jac = dynamics_jacobian(state, params, flags);
  for (std::size_t i = 0; i < state.size(); ++i) {
    jac.sub[i] *= cfg.dt;
    if (flags.gradient_cut(i)) {
      jac.diag[i] << 1.0, cfg.dt, 0.0, 0.0;
      continue;
    }
    jac.diag[i] = Eigen::Matrix2d::Identity() + cfg.dt * jac.diag[i];
  }
  return jac;
}

bool finite_difference_resolvable(const TrafficState& state, double h) {
  double scale = 1.0;
  for (const auto& veh : state.vehicles) {
    scale = std::max({scale, std::abs(veh.x), std::abs(veh.v)});
  }
  return h > 1e3 * std::numeric_limits<double>::epsilon() * scale;
}

Eigen::MatrixXd finite_difference_jacobian(const TrafficState& state, const IdmParams& params,
                                           const StepConfig& cfg, double h,
                                           std::optional<double> action,
                                           std::span<const std::optional<double>> overrides) {
  if (!(h > 0)) throw std::invalid_argument("finite-difference step must be positive");
  if (!finite_difference_resolvable(state, h)) {
    std::clog << "warning: finite-difference step " << h
              << " is below the resolution of the state; expect cancellation error\n";
  }
  const Eigen::VectorXd base = flatten(state);
  const auto dim = base.size();
  const double length = state.ring_length();
  Eigen::MatrixXd out(dim, dim);

  for (Eigen::Index col = 0; col < dim; ++col) {
    Eigen::VectorXd plus = base;
    Eigen::VectorXd minus = base;
    plus[col] += h;
    minus[col] -= h;
    const Eigen::VectorXd fp =
        flatten(step(unflatten(plus, state), params, cfg, action, overrides).next);
    const Eigen::VectorXd fm =
        flatten(step(unflatten(minus, state), params, cfg, action, overrides).next);
    Eigen::VectorXd diff = fp - fm;
    if (state.is_ring()) {
      for (Eigen::Index r = 0; r < dim; r += 2) diff[r] = std::remainder(diff[r], length);
    }
    out.col(col) = diff / (2.0 * h);
  }
  return out;
}

ActionSensitivity action_sensitivity(const StepFlags& flags, std::size_t controlled,
                                     const StepConfig& cfg,
                                     const Eigen::VectorXd& reward_grad_state,
                                     double direct_reward_grad) {
  const auto dim = static_cast<Eigen::Index>(2 * flags.size());
  if (controlled >= flags.size()) throw std::invalid_argument("controlled index out of range");
  if (reward_grad_state.size() != dim) {
    throw std::invalid_argument("reward gradient has the wrong length");
  }
  ActionSensitivity out;
  out.d_next_state_d_action = Eigen::VectorXd::Zero(dim);
  if (flags.gradient_cut(controlled) || flags.modes[controlled] != DriveMode::kAction) {
    return out;
  }
  // Explicit Euler: x' does not see this step's acceleration, v' gains dt.
  const auto row = static_cast<Eigen::Index>(2 * controlled);
  out.d_next_state_d_action[row + 1] = cfg.dt;
  out.d_reward_d_action = reward_grad_state.dot(out.d_next_state_d_action) + direct_reward_grad;
  return out;
}

ActionSensitivity action_sensitivity(const TrafficState& state, const IdmParams& params,
                                     const StepConfig& cfg, double action,
                                     const Eigen::VectorXd& reward_grad_state) {
  if (!state.controlled_index) throw std::invalid_argument("state has no controlled vehicle");
  const StepResult res = step(state, params, cfg, action);
  return action_sensitivity(res.flags, *state.controlled_index, cfg, reward_grad_state);
}

namespace {

// True when vehicle i's next velocity stays clear of the clip boundary.
bool interior(const TrafficState& state, std::size_t i, const IdmParams& params,
              const StepConfig& cfg) {
  const double accel = vehicle_acceleration(state, i, params);
  return state.vehicles[i].v + accel * cfg.dt > 1e-2;
}

}  // namespace

TrafficState random_platoon(std::size_t n, const IdmParams& params, const StepConfig& cfg,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gap_dist(5.0, 40.0);
  std::uniform_real_distribution<double> vel_dist(0.5, 25.0);

  TrafficState state;
  state.vehicles.resize(n);
  double x = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) x -= gap_dist(rng) + params.l;
    state.vehicles[i].x = x;
    do {
      state.vehicles[i].v = vel_dist(rng);
    } while (!interior(state, i, params, cfg));
  }
  return state;
}

TrafficState random_ring(std::size_t n, const IdmParams& params, const StepConfig& cfg,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gap_dist(5.0, 40.0);
  std::uniform_real_distribution<double> vel_dist(0.5, 25.0);

  std::vector<double> offsets(n, 0.0);
  double length = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double spacing = gap_dist(rng) + params.l;
    offsets[i] = -length;
    length += spacing;
  }
  std::uniform_real_distribution<double> shift_dist(0.0, length);
  const double shift = shift_dist(rng);

  TrafficState state;
  state.topology = Ring{length};
  state.vehicles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    state.vehicles[i] = {wrap_position(offsets[i] + shift, length), vel_dist(rng)};
  }
  // Vehicle i's acceleration depends on i-1 cyclically; resample until every
  // vehicle sits away from the clip boundary.
  for (int sweep = 0; sweep < 1000; ++sweep) {
    bool all_ok = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (!interior(state, i, params, cfg)) {
        state.vehicles[i].v = vel_dist(rng);
        all_ok = false;
      }
    }
    if (all_ok) return state;
  }
  throw std::runtime_error("could not sample an interior ring state");
}

JacobianBenchmarkReport jacobian_benchmark(std::size_t n, std::size_t iters, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("benchmark needs at least two vehicles");
  if (iters < 1) throw std::invalid_argument("benchmark needs at least one iteration");
  const IdmParams params;
  const StepConfig cfg;
  using Clock = std::chrono::steady_clock;

  // A fixed pool keeps memory bounded; both paths walk the same sequence.
  const std::size_t pool_size = std::min<std::size_t>(iters, 32);
  std::vector<TrafficState> pool;
  pool.reserve(pool_size);
  for (std::size_t k = 0; k < pool_size; ++k) {
    pool.push_back(random_platoon(n, params, cfg, seed * 1000003ULL + k));
  }

  JacobianBenchmarkReport report;
  report.n = n;
  report.iters = iters;

  double checksum = 0.0;
  auto t0 = Clock::now();
  for (std::size_t k = 0; k < iters; ++k) {
    const TrafficState& s = pool[k % pool_size];
    const StepResult res = step(s, params, cfg);
    const BlockJacobian jac = step_jacobian(s, params, cfg, res.flags);
    for (std::size_t i = 0; i < jac.size(); ++i) checksum += jac.diag[i].sum() + jac.sub[i].sum();
  }
  auto t1 = Clock::now();
  report.analytical_s = std::chrono::duration<double>(t1 - t0).count();
  report.analytical_checksum = checksum;

  double fd_checksum = 0.0;
  t0 = Clock::now();
  for (std::size_t k = 0; k < iters; ++k) {
    const Eigen::MatrixXd fd = finite_difference_jacobian(pool[k % pool_size], params, cfg, 1e-5);
    fd_checksum += fd.sum();
  }
  t1 = Clock::now();
  report.finite_difference_s = std::chrono::duration<double>(t1 - t0).count();
  // Keeps the oracle loop observable to the optimizer.
  if (!std::isfinite(fd_checksum)) std::clog << "warning: non-finite oracle checksum\n";
  report.speedup = report.analytical_s > 0 ? report.finite_difference_s / report.analytical_s
                                           : std::numeric_limits<double>::infinity();
  return report;
}

void write_benchmark_csv(std::ostream& out, std::span<const JacobianBenchmarkReport> rows) {
  out << "n,iters,analytical_s,fd_s,speedup\n";
  const auto old_precision = out.precision(9);
  for (const auto& r : rows) {
    out << r.n << ',' << r.iters << ',' << r.analytical_s << ',' << r.finite_difference_s << ','
        << r.speedup << '\n';
  }
  out.precision(old_precision);
}

}  // namespace difftraffic

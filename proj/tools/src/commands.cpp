#include "difftraffic/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "difftraffic/env.hpp"
#include "difftraffic/jacobian.hpp"
#include "difftraffic/rewards.hpp"
#include "difftraffic/train.hpp"

namespace difftraffic::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
}

std::uint64_t base_seed(const ExperimentConfig& cfg, const GlobalOptions& global) {
  const std::uint64_t first = cfg.training.seeds.empty() ? 0 : cfg.training.seeds.front();
  return first + global.seed_offset;
}

std::vector<double> read_actions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open action file '" + path.string() + "'");
  std::vector<double> actions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream parse(line);
    double value = 0.0;
    if (!(parse >> value) || !std::isfinite(value)) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": not a finite number");
    }
    actions.push_back(value);
  }
  return actions;
}

std::string delta_label(double delta) {
  std::ostringstream label;
  label << "delta_" << delta;
  return label.str();
}

double final_mean(const SeedRun& run, std::size_t window) {
  if (run.log.empty()) return -std::numeric_limits<double>::infinity();
  const std::size_t start = run.log.size() > window ? run.log.size() - window : 0;
  double sum = 0.0;
  for (std::size_t k = start; k < run.log.size(); ++k) sum += run.log[k].mean_reward;
  return sum / static_cast<double>(run.log.size() - start);
}

bool train_into(const ExperimentConfig& cfg, const GlobalOptions& global, const fs::path& dir,
                std::ostream& log) {
  fs::create_directories(dir);
  {
    auto out = open_output(dir / "config.json");
    out << dump_experiment(cfg);
  }
  difftraffic::TrainOptions options;
  options.jobs = global.jobs;
  const TrainResult result = train(cfg.scenario, cfg.training, options);

  bool ok = true;
  const SeedRun* best = nullptr;
  for (const auto& run : result.runs) {
    const std::string stem = "seed_" + std::to_string(run.seed);
    {
      auto out = open_output(dir / (stem + ".csv"));
      write_seed_log_csv(out, run.log);
    }
    if (run.error) {
      ok = false;
      auto out = open_output(dir / (stem + ".error.txt"));
      out << *run.error << '\n';
      log << "seed " << run.seed << " failed: " << *run.error << '\n';
      continue;
    }
    {
      auto out = open_output(dir / ("policy_" + stem + ".bin"), std::ios::binary);
      run.policy.save(out);
    }
    if (!best || final_mean(run, 10) > final_mean(*best, 10)) best = &run;
    if (!global.quiet && !run.log.empty()) {
      log << "seed " << run.seed << ": final mean reward " << run.log.back().mean_reward
          << " after " << run.log.size() << " iterations\n";
    }
  }
  {
    auto out = open_output(dir / "aggregate.csv");
    write_aggregate_csv(out, result.aggregate);
  }
  if (best) {
    auto out = open_output(dir / "policy.bin", std::ios::binary);
    best->policy.save(out);
  }
  return ok;
}

}  // namespace

json to_json(const SimulationSummary& summary) {
  return {{"mean_flow", summary.mean_flow},
          {"total_fuel_gal", summary.total_fuel_gal},
          {"collision_count", summary.collision_count},
          {"steps", summary.steps}};
}

int cmd_simulate(const SimulateOptions& opts, const GlobalOptions& global, std::ostream& log) {
  ExperimentConfig cfg = load_experiment(opts.config);
  std::vector<double> actions;
  if (opts.actions) actions = read_actions(*opts.actions);
  const std::size_t steps =
      opts.steps ? *opts.steps : (opts.actions ? actions.size() : cfg.scenario.horizon);
  if (opts.actions && actions.size() < steps) {
    throw ConfigError("action file has " + std::to_string(actions.size()) + " entries but " +
                      std::to_string(steps) + " steps were requested");
  }
  cfg.scenario.horizon = std::max<std::size_t>(steps, 1);

  fs::create_directories(opts.out);
  auto trace = open_output(opts.out / "trace.csv");
  write_trace_header(trace);

  TrafficEnv env(cfg.scenario);
  env.reset(base_seed(cfg, global));
  SimulationSummary summary;
  double flow = 0.0;
  for (std::size_t k = 0; k < steps && !env.done(); ++k) {
    std::optional<double> action;
    if (opts.actions) action = actions[k];
    const EnvStepResult res = env.step(action);
    write_trace_rows(trace, k + 1, env.state(), res.info);
    flow += res.info.reward.r_vel;
    for (double g : res.info.fuel_rates) summary.total_fuel_gal += g * cfg.scenario.step.dt;
    if (res.info.collision) ++summary.collision_count;
    ++summary.steps;
  }
  if (summary.steps > 0) summary.mean_flow = flow / static_cast<double>(summary.steps);
  write_json(opts.out / "summary.json", to_json(summary));
  if (!global.quiet) {
    log << "simulated " << summary.steps << " steps, mean_flow " << summary.mean_flow << " m/s\n";
  }
  return kExitOk;
}

int cmd_train(const TrainOptions& opts, const GlobalOptions& global, std::ostream& log) {
  ExperimentConfig cfg = load_experiment(opts.config);
  if (opts.algo) cfg.training.algorithm = parse_algorithm(*opts.algo);
  if (opts.eta) cfg.training.perturbation.eta = *opts.eta;
  for (auto& seed : cfg.training.seeds) seed += global.seed_offset;

  std::vector<std::pair<fs::path, double>> runs;
  if (opts.delta_sweep) {
    for (double d : kDeltaSweep) runs.emplace_back(opts.out / delta_label(d), d);
  } else {
    runs.emplace_back(opts.out, opts.delta.value_or(cfg.training.perturbation.delta));
  }

  bool ok = true;
  for (const auto& [dir, delta] : runs) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.training.perturbation.delta = delta;
    run_cfg.validate();
    if (!global.quiet) {
      log << "training " << to_string(run_cfg.training.algorithm) << " (delta " << delta << ", "
          << run_cfg.training.seeds.size() << " seeds) into " << dir.string() << '\n';
    }
    ok = train_into(run_cfg, global, dir, log) && ok;
  }
  return ok ? kExitOk : kExitUsage;
}

int cmd_evaluate(const EvaluateOptions& opts, const GlobalOptions& global, std::ostream& log) {
  const ExperimentConfig cfg = load_experiment(opts.config);
  if (opts.episodes == 0) throw ConfigError("--episodes must be at least 1");
  std::optional<GaussianPolicy> policy;
  if (!opts.uncontrolled) {
    if (!opts.policy) throw ConfigError("a policy file is required unless --uncontrolled is set");
    std::ifstream in(*opts.policy, std::ios::binary);
    if (!in) throw ConfigError("cannot open policy file '" + opts.policy->string() + "'");
    policy = GaussianPolicy::load(in, cfg.scenario.step.alpha_min, cfg.scenario.step.alpha_max);
    const auto expected = static_cast<int>(2 * cfg.scenario.num_vehicles);
    if (policy->net().sizes().front() != expected) {
      throw ConfigError("policy expects " + std::to_string(policy->net().sizes().front()) +
                        " inputs but the scenario produces " + std::to_string(expected));
    }
  }
  const EvalMetrics m = evaluate_policy(cfg.scenario, policy ? &*policy : nullptr, opts.episodes,
                                        base_seed(cfg, global));
  const json doc = {{"mean_flow", m.mean_flow},
                    {"fuel_per_vehicle_gal", m.fuel_per_vehicle_gal},
                    {"mean_jerk", m.mean_jerk},
                    {"mean_reward", m.mean_reward},
                    {"collisions", m.collisions},
                    {"episodes", m.episodes}};
  fs::create_directories(opts.out);
  write_json(opts.out / "evaluation.json", doc);
  if (!global.quiet) log << doc.dump(2) << '\n';
  return kExitOk;
}

std::vector<SurfaceReport> check_gradients(const ExperimentConfig& cfg, std::size_t trials,
                                           double tolerance, std::uint64_t seed,
                                           bool inject_fault) {
  const IdmParams& params = cfg.scenario.idm;
  const StepConfig& sc = cfg.scenario.step;
  const RewardWeights& weights = cfg.scenario.weights;
  const FuelModel& fuel = cfg.scenario.fuel;
  const std::size_t n = std::max<std::size_t>(cfg.scenario.num_vehicles, 2);
  constexpr double h = 1e-5;

  SurfaceReport jac{"step_jacobian", 0.0, tolerance, trials};
  SurfaceReport act{"action_sensitivity", 0.0, tolerance, trials};
  SurfaceReport rew{"reward_gradient", 0.0, tolerance, trials};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> action_dist(sc.alpha_min + 0.5, sc.alpha_max - 0.5);

  auto flat_diff = [](const TrafficState& plus, const TrafficState& minus) {
    Eigen::VectorXd d = flatten(plus) - flatten(minus);
    if (plus.is_ring()) {
      for (Eigen::Index k = 0; k < d.size(); k += 2) d[k] = std::remainder(d[k], plus.ring_length());
    }
    return d;
  };

  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t s = derive_seed(seed, t);
    TrafficState state = (t % 2 == 0) ? random_ring(n, params, sc, s) : random_platoon(n, params, sc, s);

    const StepResult base = step(state, params, sc);
    Eigen::MatrixXd analytical = step_jacobian(state, params, sc, base.flags).dense();
    if (inject_fault) analytical(1, 1) += 1e-3;
    const Eigen::MatrixXd fd = finite_difference_jacobian(state, params, sc, h);
    jac.max_error = std::max(jac.max_error, (analytical - fd).cwiseAbs().maxCoeff());

    TrafficState controlled = state;
    controlled.controlled_index = 0;
    const double a = action_dist(rng);
    const double a_prev = a + (t % 2 == 0 ? 0.7 : -0.7);
    const StepResult nominal = step(controlled, params, sc, a);
    const StepResult plus = step(controlled, params, sc, a + h);
    const StepResult minus = step(controlled, params, sc, a - h);
    const Eigen::VectorXd grad_state =
        reward_grad_state(nominal.next, nominal.accelerations, weights, fuel);
    const double direct =
        reward_grad_acceleration(nominal.next, nominal.accelerations, 0, weights, fuel) +
        jerk_grad(a, a_prev, weights);
    const ActionSensitivity sens = action_sensitivity(nominal.flags, 0, sc, grad_state, direct);
    const Eigen::VectorXd ds_fd = flat_diff(plus.next, minus.next) / (2 * h);
    const double r_plus = r_comb(plus.next, plus.accelerations, a + h, a_prev, weights, fuel);
    const double r_minus = r_comb(minus.next, minus.accelerations, a - h, a_prev, weights, fuel);
    const double dr_fd = (r_plus - r_minus) / (2 * h);
    act.max_error = std::max({act.max_error, (sens.d_next_state_d_action - ds_fd).cwiseAbs().maxCoeff(),
                              std::abs(sens.d_reward_d_action - dr_fd)});

    const Eigen::VectorXd grad = reward_grad_state(base.next, base.accelerations, weights, fuel);
    const Eigen::VectorXd x = flatten(base.next);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      Eigen::VectorXd xp = x;
      Eigen::VectorXd xm = x;
      xp[k] += h;
      xm[k] -= h;
      const double rp =
          r_comb(unflatten(xp, base.next), base.accelerations, 0.0, 0.0, weights, fuel);
      const double rm =
          r_comb(unflatten(xm, base.next), base.accelerations, 0.0, 0.0, weights, fuel);
      rew.max_error = std::max(rew.max_error, std::abs(grad[k] - (rp - rm) / (2 * h)));
    }
  }
  return {jac, act, rew};
}

int cmd_check_gradients(const CheckGradientsOptions& opts, const GlobalOptions& global,
                        std::ostream& log) {
  const ExperimentConfig cfg = load_experiment(opts.config);
  if (opts.trials == 0) throw ConfigError("--trials must be at least 1");
  const auto reports =
      check_gradients(cfg, opts.trials, opts.tolerance, base_seed(cfg, global), opts.inject_fault);
  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.passed();
    log << (r.passed() ? "PASS " : "FAIL ") << r.name << " trials=" << r.trials
        << " max_error=" << std::scientific << std::setprecision(3) << r.max_error
        << " tolerance=" << r.tolerance << std::defaultfloat << '\n';
  }
  return ok ? kExitOk : kExitVerification;
}

int cmd_bench_jacobian(const BenchJacobianOptions& opts, const GlobalOptions& global,
                       std::ostream& log) {
  std::vector<JacobianBenchmarkReport> rows;
  for (std::size_t n : opts.n) {
    if (n < 2) throw ConfigError("--n must be at least 2");
    if (opts.iters == 0) throw ConfigError("--iters must be at least 1");
    rows.push_back(jacobian_benchmark(n, opts.iters, opts.seed + global.seed_offset));
    if (!global.quiet) {
      const auto& r = rows.back();
      log << "n=" << r.n << " analytical " << r.analytical_s << " s, finite difference "
          << r.finite_difference_s << " s, speedup " << r.speedup << "x\n";
    }
  }
  fs::create_directories(opts.out);
  auto out = open_output(opts.out / "bench_jacobian.csv");
  write_benchmark_csv(out, rows);
  return kExitOk;
}

}  // namespace difftraffic::cli

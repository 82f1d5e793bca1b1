#include "difftraffic/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace difftraffic {

namespace {

IterationMetrics summarize(const Rollout& rollout, std::size_t iteration) {
  IterationMetrics m;
  m.iteration = iteration;
  std::vector<double> returns;
  for (const auto& ep : rollout.episodes) {
    if (ep.complete) returns.push_back(ep.total_reward);
  }
  if (returns.empty()) {
    for (const auto& ep : rollout.episodes) returns.push_back(ep.total_reward);
  }
  if (!returns.empty()) {
    double sum = 0.0;
    for (double r : returns) sum += r;
    m.mean_reward = sum / static_cast<double>(returns.size());
    double sq = 0.0;
    for (double r : returns) sq += (r - m.mean_reward) * (r - m.mean_reward);
    m.std_reward = std::sqrt(sq / static_cast<double>(returns.size()));
  }
  std::size_t steps = 0;
  for (const auto& ep : rollout.episodes) {
    m.mean_r_vel += ep.sum_r_vel;
    m.mean_r_mpg += ep.sum_r_mpg;
    m.mean_jerk_pen += ep.sum_jerk;
    steps += ep.steps;
    if (ep.collided) ++m.collisions;
  }
  if (steps > 0) {
    const double inv = 1.0 / static_cast<double>(steps);
    m.mean_r_vel *= inv;
    m.mean_r_mpg *= inv;
    m.mean_jerk_pen *= inv;
  }
  return m;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size() - 1))};
}

}  // namespace

SeedRun train_seed(const ScenarioConfig& scenario, const TrainConfig& cfg, std::uint64_t seed,
                   bool record_parameter_trace) {
  cfg.validate();
  SeedRun run;
  run.seed = seed;

  TrafficEnv env(scenario);
  const int obs_size = static_cast<int>(env.observation_size());
  std::mt19937_64 init_rng(derive_seed(seed, 1));
  ActorCritic model(obs_size, cfg, scenario.step, init_rng);
  std::mt19937_64 update_rng(derive_seed(seed, 2));
  const double eta = cfg.perturbation.resolved_eta(scenario.step);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    try {
      Rollout rollout =
          collect_rollout(env, model.policy, cfg.steps_per_iteration, derive_seed(seed, 1000 + it));
      const std::size_t n = rollout.units.size();

      if (cfg.algorithm == Algorithm::kDiffPpo) {
        for (std::size_t k = 0; k < n; ++k) {
          ++run.audit.units_seen;
          PerturbationOutcome out =
              perturb_experience(rollout.units[k], cfg.perturbation, eta, model.policy.low(),
                                 model.policy.high());
          if (!out.perturbed) continue;
          ++run.audit.units_perturbed;
          const double shift = std::abs(out.epsilon) * rollout.units[k].ds_da.cwiseAbs().maxCoeff();
          run.audit.max_state_shift = std::max(run.audit.max_state_shift, shift);
          if (shift > cfg.perturbation.delta) ++run.audit.bound_violations;
          rollout.units[k] = std::move(out.unit);
          // Old log-density re-evaluated at the perturbed action under the
          // frozen collecting policy.
          rollout.log_probs[k] =
              model.policy.log_prob(rollout.units[k].a, model.policy.mean(rollout.units[k].s));
        }
      }

      PpoBatch batch;
      Eigen::MatrixXd next_obs(obs_size, static_cast<Eigen::Index>(n));
      batch.observations.resize(obs_size, static_cast<Eigen::Index>(n));
      batch.actions.resize(static_cast<Eigen::Index>(n));
      batch.old_log_probs.resize(static_cast<Eigen::Index>(n));
      Eigen::VectorXd rewards(static_cast<Eigen::Index>(n));
      std::vector<bool> dones(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto col = static_cast<Eigen::Index>(k);
        const ExperienceUnit& u = rollout.units[k];
        batch.observations.col(col) = u.s;
        next_obs.col(col) = u.s_next;
        batch.actions[col] = u.a;
        batch.old_log_probs[col] = rollout.log_probs[k];
        rewards[col] = u.r;
        dones[k] = u.done;
      }
      const Eigen::VectorXd values = model.value.value(batch.observations).transpose();
      const Eigen::VectorXd next_values = model.value.value(next_obs).transpose();
      GaeResult gae = compute_gae(rewards, values, next_values, dones, cfg.gamma, cfg.gae_lambda);
      batch.advantages = normalize_advantages(gae.advantages);
      batch.returns = std::move(gae.returns);

      ppo_update(model, batch, cfg, update_rng);
      if (record_parameter_trace) run.parameter_trace.push_back(model.policy.flat_parameters());

      IterationMetrics metrics = summarize(rollout, it);
      metrics.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      run.log.push_back(metrics);
    } catch (const std::exception& e) {
      run.error = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
  }
  run.policy = model.policy;
  return run;
}

TrainResult train(const ScenarioConfig& scenario, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  scenario.validate();
  TrainResult result;
  result.runs.resize(cfg.seeds.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next.fetch_add(1); k < cfg.seeds.size(); k = next.fetch_add(1)) {
      const std::uint64_t seed = cfg.seeds[k];
      try {
        result.runs[k] = train_seed(scenario, cfg, seed, options.record_parameter_trace);
      } catch (const std::exception& e) {
        result.runs[k].seed = seed;
        result.runs[k].error = e.what();
      }
      if (options.on_iteration) {
        for (const auto& m : result.runs[k].log) options.on_iteration(result.runs[k], m);
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cfg.seeds.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  result.aggregate = aggregate_runs(result.runs);
  return result;
}

std::vector<AggregateRow> aggregate_runs(std::span<const SeedRun> runs) {
  std::size_t iterations = 0;
  for (const auto& r : runs) {
    if (!r.error) iterations = std::max(iterations, r.log.size());
  }
  std::vector<AggregateRow> rows;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> reward, std_reward, vel, mpg, jerk, collisions;
    for (const auto& r : runs) {
      if (r.error || it >= r.log.size()) continue;
      const auto& m = r.log[it];
      reward.push_back(m.mean_reward);
      std_reward.push_back(m.std_reward);
      vel.push_back(m.mean_r_vel);
      mpg.push_back(m.mean_r_mpg);
      jerk.push_back(m.mean_jerk_pen);
      collisions.push_back(static_cast<double>(m.collisions));
    }
    AggregateRow row;
    row.iteration = it + 1;
    row.seeds = reward.size();
    row.mean_reward = mean_std(reward);
    row.std_reward = mean_std(std_reward);
    row.mean_r_vel = mean_std(vel);
    row.mean_r_mpg = mean_std(mpg);
    row.mean_jerk_pen = mean_std(jerk);
    row.collisions = mean_std(collisions);
    rows.push_back(row);
  }
  return rows;
}

void write_seed_log_csv(std::ostream& out, std::span<const IterationMetrics> log) {
  out << "iteration,mean_reward,std_reward,mean_r_vel,mean_r_mpg,mean_jerk_pen,collisions,"
         "wall_time_s\n";
  const auto old_precision = out.precision(12);
  for (const auto& m : log) {
    out << m.iteration << ',' << m.mean_reward << ',' << m.std_reward << ',' << m.mean_r_vel << ','
        << m.mean_r_mpg << ',' << m.mean_jerk_pen << ',' << m.collisions << ',' << m.wall_time_s
        << '\n';
  }
  out.precision(old_precision);
}

void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows) {
  out << "iteration,seeds";
  for (const char* name :
       {"mean_reward", "std_reward", "mean_r_vel", "mean_r_mpg", "mean_jerk_pen", "collisions"}) {
    out << ',' << name << "_mean_over_seeds," << name << "_std_over_seeds";
  }
  out << '\n';
  const auto old_precision = out.precision(12);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.seeds;
    for (const auto& p : {r.mean_reward, r.std_reward, r.mean_r_vel, r.mean_r_mpg, r.mean_jerk_pen,
                          r.collisions}) {
      out << ',' << p.first << ',' << p.second;
    }
    out << '\n';
  }
  out.precision(old_precision);
}

EvalMetrics evaluate_policy(const ScenarioConfig& scenario, const GaussianPolicy* policy,
                            std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("evaluation needs at least one episode");
  TrafficEnv env(scenario);
  EvalMetrics out;
  out.episodes = episodes;
  const double n = static_cast<double>(scenario.num_vehicles);

  for (std::size_t ep = 0; ep < episodes; ++ep) {
    Observation obs = env.reset(derive_seed(seed, ep));
    double flow = 0.0;
    double fuel = 0.0;
    double jerk = 0.0;
    double reward = 0.0;
    std::size_t steps = 0;
    bool done = false;
    while (!done) {
      std::optional<double> action;
      if (policy) action = policy->mean(obs);
      EnvStepResult res = env.step(action);
      flow += res.info.reward.r_vel;
      jerk += res.info.reward.jerk;
      reward += res.reward;
      for (double g : res.info.fuel_rates) fuel += g * scenario.step.dt;
      if (res.info.collision) ++out.collisions;
      ++steps;
      done = res.done;
      obs = std::move(res.observation);
    }
    out.mean_flow += flow / static_cast<double>(steps);
    out.mean_jerk += jerk / static_cast<double>(steps);
    out.fuel_per_vehicle_gal += fuel / n;
    out.mean_reward += reward;
  }
  const double inv = 1.0 / static_cast<double>(episodes);
  out.mean_flow *= inv;
  out.mean_jerk *= inv;
  out.fuel_per_vehicle_gal *= inv;
  out.mean_reward *= inv;
  return out;
}

}  // namespace difftraffic

#include <exception>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "difftraffic/cli/commands.hpp"

namespace cli = difftraffic::cli;

int main(int argc, char** argv) {
  CLI::App app{"Differentiable IDM traffic simulation and gradient-enhanced PPO"};
  app.require_subcommand(1);

  cli::GlobalOptions global;
  global.jobs = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--seed-offset", global.seed_offset, "Added to every configured seed");
  app.add_option("--jobs", global.jobs, "Concurrent training seeds")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", global.quiet, "Suppress progress output");

  cli::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run an uncontrolled or replayed simulation");
  simulate->add_option("config", sim.config, "Experiment config (JSON)")->required();
  simulate->add_option("--steps", sim.steps, "Number of steps (default: horizon)");
  simulate->add_option("--actions", sim.actions, "File with one controlled acceleration per line");
  simulate->add_option("--out", sim.out, "Output directory")->required();

  cli::TrainOptions tr;
  auto* train = app.add_subcommand("train", "Train PPO or DiffPPO over the configured seeds");
  train->add_option("config", tr.config, "Experiment config (JSON)")->required();
  train->add_option("--algo", tr.algo, "ppo or diffppo")
      ->check(CLI::IsMember({"ppo", "diffppo"}));
  auto* delta = train->add_option("--delta", tr.delta, "Perturbation threshold");
  train->add_option("--eta", tr.eta, "Perturbation step size");
  train->add_flag("--delta-sweep", tr.delta_sweep, "Train once per delta in {0.1, 0.2, 0.4}")
      ->excludes(delta);
  train->add_option("--out", tr.out, "Output directory")->required();

  cli::EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy with mean actions");
  evaluate->add_option("config", ev.config, "Experiment config (JSON)")->required();
  evaluate->add_option("policy", ev.policy, "Policy file");
  evaluate->add_option("--episodes", ev.episodes, "Evaluation episodes");
  evaluate->add_flag("--uncontrolled", ev.uncontrolled, "Evaluate the all-IDM baseline");
  evaluate->add_option("--out", ev.out, "Output directory")->required();

  cli::CheckGradientsOptions cg;
  auto* check = app.add_subcommand("check-gradients", "Compare analytical gradients to FD");
  check->add_option("config", cg.config, "Experiment config (JSON)")->required();
  check->add_option("--trials", cg.trials, "Random states per surface");
  check->add_option("--tolerance", cg.tolerance, "Maximum allowed absolute error");
  check->add_flag("--inject-fault", cg.inject_fault)->group("");

  cli::BenchJacobianOptions bj;
  auto* bench = app.add_subcommand("bench-jacobian", "Time analytical vs FD Jacobians");
  bench->add_option("--n", bj.n, "Platoon sizes")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  bench->add_option("--iters", bj.iters, "Evaluations per size");
  bench->add_option("--seed", bj.seed, "State stream seed");
  bench->add_option("--out", bj.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    if (*simulate) return cli::cmd_simulate(sim, global, std::cerr);
    if (*train) return cli::cmd_train(tr, global, std::cerr);
    if (*evaluate) return cli::cmd_evaluate(ev, global, std::cerr);
    if (*check) return cli::cmd_check_gradients(cg, global, std::cout);
    if (*bench) return cli::cmd_bench_jacobian(bj, global, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  }
  return cli::kExitUsage;
}

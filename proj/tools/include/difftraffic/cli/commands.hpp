#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difftraffic/config.hpp"

namespace difftraffic::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitVerification = 2;

struct GlobalOptions {
  std::uint64_t seed_offset = 0;
  std::size_t jobs = 1;
  bool quiet = false;
};

struct SimulateOptions {
  std::filesystem::path config;
  std::optional<std::size_t> steps;
  std::filesystem::path out;
  /// Optional file with one controlled-vehicle acceleration per line.
  std::optional<std::filesystem::path> actions;
};

struct TrainOptions {
  std::filesystem::path config;
  std::optional<std::string> algo;
  std::optional<double> delta;
  std::optional<double> eta;
  bool delta_sweep = false;
  std::filesystem::path out;
};

struct EvaluateOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> policy;
  std::size_t episodes = 10;
  bool uncontrolled = false;
  std::filesystem::path out;
};

struct CheckGradientsOptions {
  std::filesystem::path config;
  std::size_t trials = 100;
  double tolerance = 1e-6;
  /// Test hook: adds an error to one analytical Jacobian entry.
  bool inject_fault = false;
};

struct BenchJacobianOptions {
  std::vector<std::size_t> n{100};
  std::size_t iters = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

/// The delta values of the sweep preset.
inline const std::vector<double> kDeltaSweep{0.1, 0.2, 0.4};

int cmd_simulate(const SimulateOptions& opts, const GlobalOptions& global, std::ostream& log);
int cmd_train(const TrainOptions& opts, const GlobalOptions& global, std::ostream& log);
int cmd_evaluate(const EvaluateOptions& opts, const GlobalOptions& global, std::ostream& log);
int cmd_check_gradients(const CheckGradientsOptions& opts, const GlobalOptions& global,
                        std::ostream& log);
int cmd_bench_jacobian(const BenchJacobianOptions& opts, const GlobalOptions& global,
                       std::ostream& log);

struct SurfaceReport {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t trials = 0;
  bool passed() const { return max_error <= tolerance; }
};

/// FD-versus-analytical comparison of the step Jacobian, the action
/// sensitivity and the reward gradient on randomized states.
std::vector<SurfaceReport> check_gradients(const ExperimentConfig& cfg, std::size_t trials,
                                           double tolerance, std::uint64_t seed,
                                           bool inject_fault = false);

/// Summary of an uncontrolled or replayed simulation.
struct SimulationSummary {
  double mean_flow = 0.0;
  double total_fuel_gal = 0.0;
  std::size_t collision_count = 0;
  std::size_t steps = 0;
};

nlohmann::json to_json(const SimulationSummary& summary);

}  // namespace difftraffic::cli

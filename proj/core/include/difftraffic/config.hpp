#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difftraffic/env.hpp"
#include "difftraffic/ppo.hpp"

namespace difftraffic {

/// Raised for malformed or invalid experiment configuration files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment file with four sections: "scenario", "rewards", "training"
/// and "output". Missing keys keep their defaults; unknown keys are errors.
struct ExperimentConfig {
  ScenarioConfig scenario;
  TrainConfig training;
  std::string output_directory = "runs";

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& doc);

ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);
std::string dump_experiment(const ExperimentConfig& cfg);

}  // namespace difftraffic

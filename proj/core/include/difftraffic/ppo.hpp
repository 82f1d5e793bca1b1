#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "difftraffic/env.hpp"
#include "difftraffic/network.hpp"

namespace difftraffic {

enum class Algorithm { kPpo, kDiffPpo };

std::string to_string(Algorithm algo);
Algorithm parse_algorithm(const std::string& name);

/// Experience-perturbation settings. `eta` unset means 0.1 * action range.
struct PerturbationConfig {
  double delta = 0.2;
  std::optional<double> eta;

  void validate() const;
  double resolved_eta(const StepConfig& step) const;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::kPpo;
  std::size_t iterations = 50;
  std::size_t steps_per_iteration = 3000;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  std::size_t epochs = 4;
  std::size_t minibatch_size = 256;
  double learning_rate = 3e-4;
  std::vector<int> hidden_sizes{64, 64};
  double init_log_std = -0.5;
  double max_grad_norm = 0.5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  PerturbationConfig perturbation;

  void validate() const;
};

/// Deterministic seed derivation for (base seed, stream index) pairs.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct EpisodeStats {
  double total_reward = 0.0;
  double sum_r_vel = 0.0;
  double sum_r_mpg = 0.0;
  double sum_jerk = 0.0;
  std::size_t steps = 0;
  bool collided = false;
  bool complete = false;
};

struct Rollout {
  std::vector<ExperienceUnit> units;
  /// Log-density of the recorded action under the collecting policy.
  std::vector<double> log_probs;
  std::vector<EpisodeStats> episodes;
};

/// Collects exactly `steps` units, resetting the environment at the start
/// and whenever an episode ends. Episode k is reset with derive_seed(seed, k).
Rollout collect_rollout(TrafficEnv& env, const GaussianPolicy& policy, std::size_t steps,
                        std::uint64_t seed);

struct PerturbationOutcome {
  ExperienceUnit unit;
  double epsilon = 0.0;
  bool perturbed = false;
};

/// Shifts (a, r, s_next) along the simulator gradients by epsilon, with
/// epsilon = eta * sign(dr/da) shrunk until |epsilon * ds/da|_inf <= delta
/// and the action stays inside [low, high]. Units that are terminal,
/// gradient-cut or have zero reward gradient pass through unchanged.
PerturbationOutcome perturb_experience(const ExperienceUnit& unit, const PerturbationConfig& cfg,
                                       double eta, double low, double high);

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

/// Generalized advantage estimation over a rollout that may span several
/// episodes. `next_values[t]` is V(s_next of unit t); done units do not
/// bootstrap and cut the recursion.
GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const Eigen::VectorXd& next_values, const std::vector<bool>& dones,
                      double gamma, double gae_lambda);

/// Standardizes to zero mean and unit (population) variance.
Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& advantages);

struct PpoBatch {
  Eigen::MatrixXd observations;  // obs_dim x B
  Eigen::VectorXd actions;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;  // already normalized
  Eigen::VectorXd returns;
};

struct PpoStats {
  double surrogate_loss = 0.0;
  double value_loss = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

/// Policy and value learners plus their optimizer state.
struct ActorCritic {
  GaussianPolicy policy;
  ValueFunction value;
  Adam policy_opt;
  Adam value_opt;

  ActorCritic() = default;
  ActorCritic(int observation_size, const TrainConfig& cfg, const StepConfig& step,
              std::mt19937_64& rng);
};

/// Clipped-surrogate PPO: `epochs` passes over shuffled minibatches.
PpoStats ppo_update(ActorCritic& model, const PpoBatch& batch, const TrainConfig& cfg,
                    std::mt19937_64& rng);

/// Surrogate loss and its gradient with respect to the flat policy
/// parameters on one minibatch. Exposed for gradient checking.
double surrogate_loss_and_grad(const GaussianPolicy& policy, const PpoBatch& batch,
                               const std::vector<Eigen::Index>& indices, double clip_ratio,
                               Eigen::VectorXd* grad, double* approx_kl = nullptr,
                               double* clip_fraction = nullptr);

}  // namespace difftraffic

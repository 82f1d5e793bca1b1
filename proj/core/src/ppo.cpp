#include "difftraffic/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace difftraffic {

std::string to_string(Algorithm algo) { return algo == Algorithm::kPpo ? "ppo" : "diffppo"; }

Algorithm parse_algorithm(const std::string& name) {
  if (name == "ppo") return Algorithm::kPpo;
  if (name == "diffppo") return Algorithm::kDiffPpo;
  throw std::invalid_argument("unknown algorithm '" + name + "' (expected ppo or diffppo)");
}

void PerturbationConfig::validate() const {
  if (!(delta > 0) || !std::isfinite(delta)) throw std::invalid_argument("delta must be positive");
  if (eta && (!(*eta >= 0) || !std::isfinite(*eta))) {
    throw std::invalid_argument("eta must be non-negative");
  }
}

double PerturbationConfig::resolved_eta(const StepConfig& step) const {
  return eta ? *eta : 0.1 * (step.alpha_max - step.alpha_min);
}

void TrainConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) {
    throw std::invalid_argument("gae_lambda must lie in [0, 1]");
  }
  if (!(clip_ratio > 0)) throw std::invalid_argument("clip_ratio must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (epochs < 1 || minibatch_size < 1) {
    throw std::invalid_argument("epochs and minibatch_size must be at least 1");
  }
  if (hidden_sizes.empty()) throw std::invalid_argument("need at least one hidden layer");
  for (int h : hidden_sizes) {
    if (h < 1) throw std::invalid_argument("hidden sizes must be positive");
  }
  if (!(max_grad_norm > 0)) throw std::invalid_argument("max_grad_norm must be positive");
  if (seeds.empty()) throw std::invalid_argument("need at least one seed");
  perturbation.validate();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over a combined key.
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + stream + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rollout collect_rollout(TrafficEnv& env, const GaussianPolicy& policy, std::size_t steps,
                        std::uint64_t seed) {
  Rollout out;
  if (steps == 0) return out;
  out.units.reserve(steps);
  out.log_probs.reserve(steps);

  std::mt19937_64 rng(derive_seed(seed, 0xAC710A5ULL));
  std::uint64_t episode = 0;
  Observation obs = env.reset(derive_seed(seed, episode));
  EpisodeStats stats;

  for (std::size_t t = 0; t < steps; ++t) {
    double log_prob = 0.0;
    const double action = policy.sample(obs, rng, &log_prob);
    EnvStepResult res = env.step(action);

    stats.total_reward += res.reward;
    stats.sum_r_vel += res.info.reward.r_vel;
    stats.sum_r_mpg += res.info.reward.r_mpg;
    stats.sum_jerk += res.info.reward.jerk;
    stats.collided = stats.collided || res.info.collision;
    ++stats.steps;

    out.units.push_back(std::move(res.unit));
    out.log_probs.push_back(log_prob);

    if (res.done) {
      stats.complete = true;
      out.episodes.push_back(stats);
      stats = {};
      ++episode;
      if (t + 1 < steps) obs = env.reset(derive_seed(seed, episode));
    } else {
      obs = std::move(res.observation);
    }
  }
  if (stats.steps > 0) out.episodes.push_back(stats);
  return out;
}

PerturbationOutcome perturb_experience(const ExperienceUnit& unit, const PerturbationConfig& cfg,
                                       double eta, double low, double high) {
  PerturbationOutcome out{unit, 0.0, false};
  if (unit.done || unit.gradient_cut || unit.dr_da == 0.0 || eta == 0.0) return out;

  double magnitude = eta;
  const double max_ds = unit.ds_da.size() > 0 ? unit.ds_da.cwiseAbs().maxCoeff() : 0.0;
  if (max_ds > 0.0 && magnitude * max_ds > cfg.delta) magnitude = cfg.delta / max_ds;
  double eps = unit.dr_da > 0.0 ? magnitude : -magnitude;

  const double target = std::clamp(unit.a + eps, low, high);
  eps = target - unit.a;
  // Rounding in the division or the clamp may overshoot the bound by an ulp.
  while (std::abs(eps) * max_ds > cfg.delta) eps = std::nextafter(eps, 0.0);
  if (eps == 0.0) return out;

  out.epsilon = eps;
  out.perturbed = true;
  out.unit.a = unit.a + eps;
  out.unit.r = unit.r + eps * unit.dr_da;
  out.unit.s_next = unit.s_next + eps * unit.ds_da;
  return out;
}

GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const Eigen::VectorXd& next_values, const std::vector<bool>& dones,
                      double gamma, double gae_lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || next_values.size() != n || static_cast<Eigen::Index>(dones.size()) != n) {
    throw std::invalid_argument("GAE inputs have mismatched lengths");
  }
  GaeResult out;
  out.advantages = Eigen::VectorXd::Zero(n);
  double running = 0.0;
  for (Eigen::Index t = n; t-- > 0;) {
    const bool done = dones[static_cast<std::size_t>(t)];
    const double bootstrap = done ? 0.0 : gamma * next_values[t];
    const double td = rewards[t] + bootstrap - values[t];
    // The last unit of a rollout bootstraps but has no successor advantage.
    const double carry = (done || t + 1 == n) ? 0.0 : gamma * gae_lambda * running;
    running = td + carry;
    out.advantages[t] = running;
  }
  out.returns = out.advantages + values;
  return out;
}

Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& advantages) {
  if (advantages.size() == 0) return advantages;
  const double mean = advantages.mean();
  const Eigen::VectorXd centered = advantages.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(advantages.size());
  if (!(var > 1e-24)) return Eigen::VectorXd::Zero(advantages.size());
  Eigen::VectorXd out = centered / std::sqrt(var);
  // Re-center to remove the residual of the division.
  out.array() -= out.mean();
  return out;
}

ActorCritic::ActorCritic(int observation_size, const TrainConfig& cfg, const StepConfig& step,
                         std::mt19937_64& rng)
    : policy(observation_size, cfg.hidden_sizes, step.alpha_min, step.alpha_max, cfg.init_log_std,
             rng),
      value(observation_size, cfg.hidden_sizes, rng),
      policy_opt(policy.flat_parameters().size(), cfg.learning_rate),
      value_opt(value.net().parameter_count(), cfg.learning_rate) {}

namespace {

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(idx[k]);
  return out;
}

void clip_norm(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
}

}  // namespace

double surrogate_loss_and_grad(const GaussianPolicy& policy, const PpoBatch& batch,
                               const std::vector<Eigen::Index>& indices, double clip_ratio,
                               Eigen::VectorXd* grad, double* approx_kl, double* clip_fraction) {
  const auto b = static_cast<Eigen::Index>(indices.size());
  const Eigen::MatrixXd obs = gather_columns(batch.observations, indices);
  Mlp::Tape tape;
  Eigen::RowVectorXd pre;
  const Eigen::RowVectorXd mu = policy.mean(obs, &tape, &pre);
  const double log_std = policy.log_std();
  const double inv_std = std::exp(-log_std);
  const double half_range = 0.5 * (policy.high() - policy.low());

  double loss = 0.0;
  double kl = 0.0;
  double clipped = 0.0;
  Eigen::RowVectorXd d_pre(b);
  double d_log_std = 0.0;
  for (Eigen::Index k = 0; k < b; ++k) {
    const Eigen::Index i = indices[static_cast<std::size_t>(k)];
    const double a = batch.actions[i];
    const double adv = batch.advantages[i];
    const double z = (a - mu[k]) * inv_std;
    const double logp = policy.log_prob(a, mu[k]);
    const double ratio = std::exp(logp - batch.old_log_probs[i]);
    const double lo = 1.0 - clip_ratio;
    const double hi = 1.0 + clip_ratio;
    const double surr = std::min(ratio * adv, std::clamp(ratio, lo, hi) * adv);
    loss -= surr;
    kl += batch.old_log_probs[i] - logp;
    const bool saturated = (adv >= 0 && ratio > hi) || (adv < 0 && ratio < lo);
    if (saturated) clipped += 1.0;
    // d(-surr)/d logp; zero where the clipped branch is active.
    const double d_logp = saturated ? 0.0 : -ratio * adv;
    const double tanh_pre = std::tanh(pre[k]);
    d_pre[k] = d_logp * (z * inv_std) * half_range * (1.0 - tanh_pre * tanh_pre);
    d_log_std += d_logp * (z * z - 1.0);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  loss *= inv_b;
  if (approx_kl) *approx_kl = kl * inv_b;
  if (clip_fraction) *clip_fraction = clipped * inv_b;

  if (grad) {
    const Eigen::Index net_params = policy.net().parameter_count();
    Eigen::VectorXd net_grad = Eigen::VectorXd::Zero(net_params);
    policy.net().backward(tape, d_pre * inv_b, net_grad);
    grad->resize(net_params + 1);
    grad->head(net_params) = net_grad;
    (*grad)[net_params] = d_log_std * inv_b;
  }
  return loss;
}

PpoStats ppo_update(ActorCritic& model, const PpoBatch& batch, const TrainConfig& cfg,
                    std::mt19937_64& rng) {
  const auto n = batch.observations.cols();
  PpoStats stats;
  if (n == 0) return stats;
  model.value.update_return_stats(batch.returns);
  const double ret_mean = model.value.return_mean();
  const double ret_std = model.value.return_std();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto mb = static_cast<std::size_t>(cfg.minibatch_size);
  std::size_t updates = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::vector<Eigen::Index> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(start + mb, order.size())));

      Eigen::VectorXd p_grad;
      double kl = 0.0;
      double clip_frac = 0.0;
      const double p_loss =
          surrogate_loss_and_grad(model.policy, batch, idx, cfg.clip_ratio, &p_grad, &kl, &clip_frac);

      const Eigen::MatrixXd obs = gather_columns(batch.observations, idx);
      Mlp::Tape tape;
      const Eigen::RowVectorXd v_pred = model.value.net().forward(obs, &tape).row(0);
      Eigen::RowVectorXd err(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const double target = (batch.returns[idx[k]] - ret_mean) / ret_std;
        err[static_cast<Eigen::Index>(k)] = v_pred[static_cast<Eigen::Index>(k)] - target;
      }
      const double v_loss = err.squaredNorm() / static_cast<double>(idx.size());

      if (!std::isfinite(p_loss) || !std::isfinite(v_loss) || !p_grad.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite PPO loss at epoch " << epoch << ", minibatch starting " << start
            << ": surrogate=" << p_loss << " value=" << v_loss
            << " log_std=" << model.policy.log_std();
        throw std::runtime_error(msg.str());
      }

      clip_norm(p_grad, cfg.max_grad_norm);
      Eigen::VectorXd flat = model.policy.flat_parameters();
      model.policy_opt.step(flat, p_grad);
      model.policy.set_flat_parameters(flat);

      Eigen::VectorXd v_grad = Eigen::VectorXd::Zero(model.value.net().parameter_count());
      model.value.net().backward(tape, err * (2.0 / static_cast<double>(idx.size())), v_grad);
      clip_norm(v_grad, cfg.max_grad_norm);
      model.value_opt.step(model.value.net().parameters(), v_grad);

      stats.surrogate_loss += p_loss;
      stats.value_loss += v_loss;
      stats.approx_kl += kl;
      stats.clip_fraction += clip_frac;
      ++updates;
    }
  }
  const double inv = 1.0 / static_cast<double>(updates);
  stats.surrogate_loss *= inv;
  stats.value_loss *= inv;
  stats.approx_kl *= inv;
  stats.clip_fraction *= inv;
  return stats;
}

}  // namespace difftraffic

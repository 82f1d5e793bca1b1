#include "difftraffic/network.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace difftraffic {

Mlp::Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_gain)
    : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("network needs an input and an output size");
  for (int s : sizes_) {
    if (s < 1) throw std::invalid_argument("layer sizes must be positive");
  }
  Eigen::Index total = 0;
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[k]) * sizes_[k + 1] + sizes_[k + 1];
  }
  params_ = Eigen::VectorXd::Zero(total);

  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t k = 0; k < layers; ++k) {
    const double scale = (k + 1 == layers ? output_gain : 1.0) / std::sqrt(double(sizes_[k]));
    const Eigen::Index count = static_cast<Eigen::Index>(sizes_[k]) * sizes_[k + 1];
    for (Eigen::Index p = 0; p < count; ++p) params_[offsets_[k] + p] = scale * normal(rng);
  }
}

Eigen::Map<const Mlp::RowMajor> Mlp::weight(std::size_t layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t layer) const {
  const Eigen::Index start = offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer]) * sizes_[layer + 1];
  return {params_.data() + start, sizes_[layer + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs, Tape* tape) const {
  if (inputs.rows() != sizes_.front()) throw std::invalid_argument("network input size mismatch");
  const std::size_t layers = sizes_.size() - 1;
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(inputs);
  }
  Eigen::MatrixXd act = inputs;
  for (std::size_t k = 0; k < layers; ++k) {
    Eigen::MatrixXd z = weight(k) * act;
    z.colwise() += bias(k);
    if (k + 1 < layers) z = z.array().tanh().matrix();
    act = std::move(z);
    if (tape) tape->activations.push_back(act);
  }
  return act;
}

void Mlp::backward(const Tape& tape, const Eigen::MatrixXd& d_outputs, Eigen::VectorXd& grad) const {
  const std::size_t layers = sizes_.size() - 1;
  if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd delta = d_outputs;
  for (std::size_t k = layers; k-- > 0;) {
    if (k + 1 < layers) {
      const auto& h = tape.activations[k + 1];
      delta = (delta.array() * (1.0 - h.array().square())).matrix();
    }
    const Eigen::MatrixXd& prev = tape.activations[k];
    Eigen::Map<RowMajor> d_w(grad.data() + offsets_[k], sizes_[k + 1], sizes_[k]);
    d_w.noalias() += delta * prev.transpose();
    const Eigen::Index b_start = offsets_[k] + static_cast<Eigen::Index>(sizes_[k]) * sizes_[k + 1];
    grad.segment(b_start, sizes_[k + 1]) += delta.rowwise().sum();
    if (k > 0) delta = weight(k).transpose() * delta;
  }
}

Adam::Adam(Eigen::Index size, double learning_rate)
    : lr_(learning_rate), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

GaussianPolicy::GaussianPolicy(int observation_size, const std::vector<int>& hidden, double low,
                               double high, double init_log_std, std::mt19937_64& rng)
    : log_std_(init_log_std), low_(low), high_(high) {
  std::vector<int> sizes{observation_size};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  net_ = Mlp(sizes, rng, 0.01);
}

Eigen::RowVectorXd GaussianPolicy::mean(const Eigen::MatrixXd& observations, Mlp::Tape* tape,
                                        Eigen::RowVectorXd* pre_activation) const {
  const Eigen::RowVectorXd pre = net_.forward(observations, tape).row(0);
  if (pre_activation) *pre_activation = pre;
  const double mid = 0.5 * (high_ + low_);
  const double half = 0.5 * (high_ - low_);
  return (mid + half * pre.array().tanh()).matrix();
}

double GaussianPolicy::mean(const Eigen::VectorXd& observation) const {
  return mean(Eigen::MatrixXd(observation))[0];
}

double GaussianPolicy::log_prob(double action, double mean) const {
  const double z = (action - mean) * std::exp(-log_std_);
  return -0.5 * z * z - log_std_ - 0.5 * std::log(2.0 * std::numbers::pi);
}

double GaussianPolicy::sample(const Eigen::VectorXd& observation, std::mt19937_64& rng,
                              double* log_prob_out) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double mu = mean(observation);
  const double raw = mu + std::exp(log_std_) * normal(rng);
  const double action = std::clamp(raw, low_, high_);
  if (log_prob_out) *log_prob_out = log_prob(action, mu);
  return action;
}

Eigen::VectorXd GaussianPolicy::flat_parameters() const {
  Eigen::VectorXd flat(net_.parameter_count() + 1);
  flat.head(net_.parameter_count()) = net_.parameters();
  flat[net_.parameter_count()] = log_std_;
  return flat;
}

void GaussianPolicy::set_flat_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != net_.parameter_count() + 1) {
    throw std::invalid_argument("policy parameter vector has the wrong length");
  }
  net_.parameters() = flat.head(net_.parameter_count());
  log_std_ = flat[net_.parameter_count()];
}

namespace {

constexpr std::array<char, 8> kPolicyMagic{'D', 'T', 'P', 'O', 'L', 'I', 'C', 'Y'};
constexpr std::uint32_t kPolicyVersion = 1;

template <typename U>
void write_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t k = 0; k < sizeof(U); ++k) {
    bytes[k] = static_cast<char>((value >> (8 * k)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("policy file truncated");
  U value = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) value |= static_cast<U>(bytes[k]) << (8 * k);
  return value;
}

}  // namespace

void GaussianPolicy::save(std::ostream& out) const {
  out.write(kPolicyMagic.data(), kPolicyMagic.size());
  write_le<std::uint32_t>(out, kPolicyVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net_.sizes().size()));
  for (int s : net_.sizes()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s));
  const Eigen::VectorXd flat = flat_parameters();
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(flat[k]));
  }
}

GaussianPolicy GaussianPolicy::load(std::istream& in, double low, double high) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kPolicyMagic) throw std::runtime_error("not a policy file (bad magic)");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kPolicyVersion) {
    throw std::runtime_error("unsupported policy file version " + std::to_string(version));
  }
  const auto layers = read_le<std::uint32_t>(in);
  if (layers < 2 || layers > 64) throw std::runtime_error("policy file has a bad layer count");
  std::vector<int> sizes;
  for (std::uint32_t k = 0; k < layers; ++k) {
    const auto s = read_le<std::uint32_t>(in);
    if (s < 1 || s > (1u << 20)) throw std::runtime_error("policy file has a bad layer size");
    sizes.push_back(static_cast<int>(s));
  }
  if (sizes.back() != 1) throw std::runtime_error("policy file must have a scalar output");

  GaussianPolicy policy;
  std::mt19937_64 unused_rng(0);
  policy.net_ = Mlp(sizes, unused_rng);
  policy.low_ = low;
  policy.high_ = high;
  Eigen::VectorXd flat(policy.net_.parameter_count() + 1);
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    flat[k] = std::bit_cast<double>(read_le<std::uint64_t>(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("policy file has trailing bytes");
  }
  policy.set_flat_parameters(flat);
  return policy;
}

ValueFunction::ValueFunction(int observation_size, const std::vector<int>& hidden,
                             std::mt19937_64& rng) {
  std::vector<int> sizes{observation_size};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  net_ = Mlp(sizes, rng, 1.0);
}

double ValueFunction::return_std() const {
  if (count_ < 2) return 1.0;
  return std::max(std::sqrt(m2_ / count_), 1e-6);
}

Eigen::RowVectorXd ValueFunction::value(const Eigen::MatrixXd& observations) const {
  return (mean_ + return_std() * net_.forward(observations).row(0).array()).matrix();
}

void ValueFunction::update_return_stats(const Eigen::VectorXd& returns) {
  for (Eigen::Index k = 0; k < returns.size(); ++k) {
    count_ += 1.0;
    const double d = returns[k] - mean_;
    mean_ += d / count_;
    m2_ += d * (returns[k] - mean_);
  }
}

}  // namespace difftraffic

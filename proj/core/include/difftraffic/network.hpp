#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace difftraffic {

/// Fully connected network with tanh hidden layers and a linear output.
/// Parameters live in one flat vector, layer by layer: W (row-major,
/// out x in) followed by b.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {inputs, hidden..., outputs}. Weights ~ N(0, 1/fan_in), scaled
  /// by `output_gain` on the last layer; biases start at zero.
  Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_gain = 1.0);

  /// Activations kept by forward() for the reverse pass. Column k of each
  /// matrix belongs to sample k.
  struct Tape {
    std::vector<Eigen::MatrixXd> activations;
  };

  /// Inputs are (in x batch); returns (out x batch).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Tape* tape = nullptr) const;

  /// Accumulates dL/dparams into `grad` given dL/doutputs.
  void backward(const Tape& tape, const Eigen::MatrixXd& d_outputs, Eigen::VectorXd& grad) const;

  const std::vector<int>& sizes() const { return sizes_; }
  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }

 private:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Index weight_offset(std::size_t layer) const { return offsets_[layer]; }
  Eigen::Map<const RowMajor> weight(std::size_t layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd params_;
};

/// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, double learning_rate);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  double learning_rate() const { return lr_; }

 private:
  double lr_ = 3e-4;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

/// Gaussian policy over a scalar action. The mean is squashed into
/// [low, high] with tanh; the log standard deviation is state independent.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int observation_size, const std::vector<int>& hidden, double low, double high,
                 double init_log_std, std::mt19937_64& rng);

  /// Row vector of action means for a batch of observations (columns).
  Eigen::RowVectorXd mean(const Eigen::MatrixXd& observations, Mlp::Tape* tape = nullptr,
                          Eigen::RowVectorXd* pre_activation = nullptr) const;
  double mean(const Eigen::VectorXd& observation) const;
  double log_prob(double action, double mean) const;
  double sample(const Eigen::VectorXd& observation, std::mt19937_64& rng, double* log_prob) const;

  double log_std() const { return log_std_; }
  void set_log_std(double value) { log_std_ = value; }
  double low() const { return low_; }
  double high() const { return high_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  /// Flat view used by the optimizer: network parameters then log_std.
  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& flat);

  /// Binary layout: "DTPOLICY", u32 version, u32 layer count, u32 sizes...,
  /// then f64 parameters (network then log_std), all little-endian.
  void save(std::ostream& out) const;
  static GaussianPolicy load(std::istream& in, double low, double high);

 private:
  Mlp net_;
  double log_std_ = 0.0;
  double low_ = -1.0;
  double high_ = 1.0;
};

/// Value function predicting standardized returns; `value()` undoes the
/// standardization with running return statistics.
class ValueFunction {
 public:
  ValueFunction() = default;
  ValueFunction(int observation_size, const std::vector<int>& hidden, std::mt19937_64& rng);

  Eigen::RowVectorXd value(const Eigen::MatrixXd& observations) const;
  /// Folds a batch of return targets into the running mean/variance.
  void update_return_stats(const Eigen::VectorXd& returns);
  double return_mean() const { return mean_; }
  double return_std() const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
  double count_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace difftraffic

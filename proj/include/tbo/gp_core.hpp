#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "tbo/lbfgsb.hpp"

namespace tbo {

double softplus(double x);
double softplus_inverse(double y);
/// d softplus / dx, i.e. the logistic sigmoid.
double softplus_derivative(double x);

/// Squared-exponential ARD hyperparameters, held in constrained space.
///
/// The unconstrained ("raw") layout used by optimizers is
/// `[signal, lengthscale_1 .. lengthscale_D, noise]`, each mapped through
/// softplus. Values built from raw vectors are therefore strictly positive;
/// fixed hyperparameters built directly may set the signal or noise
/// variance to exactly zero.
class KernelHyperparams {
 public:
  KernelHyperparams(double signal_variance, Eigen::VectorXd lengthscales, double noise_variance);

  static KernelHyperparams from_raw(const Eigen::VectorXd& raw);
  static KernelHyperparams isotropic(Eigen::Index dim, double signal_variance, double lengthscale,
                                     double noise_variance);

  Eigen::VectorXd raw() const;
  static Eigen::Index raw_size(Eigen::Index dim) { return dim + 2; }

  double signal_variance() const { return signal_variance_; }
  const Eigen::VectorXd& lengthscales() const { return lengthscales_; }
  double noise_variance() const { return noise_variance_; }
  Eigen::Index dim() const { return lengthscales_.size(); }

  /// Multiplies signal and noise variance by `factor` (unit conversion of outputs).
  KernelHyperparams scaled(double factor) const;
  KernelHyperparams with_noise(double noise_variance) const;
  KernelHyperparams with_signal_variance(double signal_variance) const;

  bool operator==(const KernelHyperparams& other) const = default;

 private:
  double signal_variance_;
  Eigen::VectorXd lengthscales_;
  double noise_variance_;
};

/// Observations of one task. Inputs are N x D, one row per point.
struct TaskDataset {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd observations;
  int task_id = 0;

  TaskDataset() = default;
  TaskDataset(Eigen::MatrixXd x, Eigen::VectorXd y, int id = 0);
  static TaskDataset empty(Eigen::Index dim, int id = 0);

  Eigen::Index size() const { return observations.size(); }
  Eigen::Index dim() const { return inputs.cols(); }
  bool is_empty() const { return observations.size() == 0; }
  TaskDataset with_observations(Eigen::VectorXd y) const;
};

struct GaussianPrediction {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  Eigen::VectorXd variance() const { return covariance.diagonal(); }
};

/// Mean and marginal variances only; what acquisition functions need.
struct MarginalPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

using MeanFunction = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

MeanFunction zero_mean();
MeanFunction constant_mean(double value);

/// SE-ARD covariance between the rows of `a` and `b`; no noise term.
Eigen::MatrixXd kernel_eval(const KernelHyperparams& hp, const Eigen::MatrixXd& a,
                            const Eigen::MatrixXd& b);

/// Cholesky factor of a symmetric matrix with adaptive diagonal jitter.
///
/// The first attempt uses no jitter; afterwards jitter starts at
/// 1e-10 * trace/N and grows tenfold up to 1e-4 * trace/N.
struct RobustCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;

  Eigen::MatrixXd lower() const { return llt.matrixL(); }
  double log_determinant() const;
};
RobustCholesky robust_cholesky(const Eigen::MatrixXd& matrix);

/// Exact GP posterior for one task with fixed hyperparameters. Immutable.
class ConditionedGP {
 public:
  ConditionedGP(KernelHyperparams hp, TaskDataset data, MeanFunction prior_mean);

  GaussianPrediction predict(const Eigen::MatrixXd& queries) const;
  MarginalPrediction predict_marginal(const Eigen::MatrixXd& queries) const;

  const KernelHyperparams& hyperparams() const { return hp_; }
  const TaskDataset& data() const { return data_; }
  const MeanFunction& prior_mean() const { return prior_mean_; }
  /// Lower-triangular factor of k(X, X) + noise * I (+ jitter). Empty when no data.
  Eigen::MatrixXd cholesky_factor() const;
  const Eigen::VectorXd& weights() const { return weights_; }
  double jitter() const { return factor_.jitter; }

 private:
  void check_queries(const Eigen::MatrixXd& queries) const;

  KernelHyperparams hp_;
  TaskDataset data_;
  MeanFunction prior_mean_;
  RobustCholesky factor_;
  Eigen::VectorXd weights_;
};

ConditionedGP condition(const KernelHyperparams& hp, const TaskDataset& data,
                        const MeanFunction& prior_mean = zero_mean());

struct LikelihoodValue {
  double value = 0.0;
  Eigen::VectorXd gradient;  // w.r.t. raw (softplus) hyperparameters
};

/// Log evidence of `data` under GP(prior_mean, k + extra) with noise.
/// `extra_covariance`, when given, is a fixed N x N matrix added to k(X, X)
/// and carries no gradient.
LikelihoodValue log_marginal_likelihood(const KernelHyperparams& hp, const TaskDataset& data,
                                        const MeanFunction& prior_mean = zero_mean(),
                                        const Eigen::MatrixXd* extra_covariance = nullptr);

struct HyperparameterOptions {
  int n_restarts = 10;
  double lower_bound = 1e-6;  // constrained space
  double upper_bound = 1e3;
  const Eigen::MatrixXd* extra_covariance = nullptr;
  LbfgsbOptions optimizer{};
};

struct HyperparameterFit {
  KernelHyperparams hyperparams;
  double log_likelihood = 0.0;
  std::vector<RestartReport> restarts;
};

/// Draws `count` raw initial guesses x' ~ N(0, 1), clipped to `bounds`.
std::vector<Eigen::VectorXd> draw_initial_guesses(std::size_t count, const BoxBounds& bounds,
                                                  Rng& rng);

/// Raw-space box corresponding to [lower, upper] in constrained space.
BoxBounds softplus_bounds(Eigen::Index size, double lower, double upper);

/// Maximum-likelihood SE-ARD fit with multi-start bounded quasi-Newton.
HyperparameterFit optimize_hyperparameters(const TaskDataset& data, const MeanFunction& prior_mean,
                                           Rng& rng, const HyperparameterOptions& options = {});

struct Normalization {
  Eigen::VectorXd normalized;
  double mean = 0.0;
  double std = 1.0;

  Eigen::VectorXd denormalize(const Eigen::VectorXd& values) const {
    return (values.array() * std + mean).matrix();
  }
};

/// Shifts to zero mean and scales to unit (population) std; a std below
/// 1e-12 leaves the scale at 1.
Normalization normalize_targets(const Eigen::VectorXd& y);

}  // namespace tbo

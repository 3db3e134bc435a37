#include "tbo/gp_core.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "tbo/errors.hpp"

namespace tbo {

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw InputError("softplus_inverse requires a positive argument");
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

double softplus_derivative(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- KernelHyperparams -------------------------------------------------------

KernelHyperparams::KernelHyperparams(double signal_variance, Eigen::VectorXd lengthscales,
                                     double noise_variance)
    : signal_variance_(signal_variance),
      lengthscales_(std::move(lengthscales)),
      noise_variance_(noise_variance) {
  if (!(signal_variance_ >= 0.0) || !std::isfinite(signal_variance_))
    throw InputError("signal variance must be finite and non-negative");
  if (!(noise_variance_ >= 0.0) || !std::isfinite(noise_variance_))
    throw InputError("noise variance must be finite and non-negative");
  if (lengthscales_.size() == 0) throw InputError("at least one lengthscale is required");
  for (double l : lengthscales_)
    if (!(l > 0.0) || !std::isfinite(l)) throw InputError("lengthscales must be positive");
}

KernelHyperparams KernelHyperparams::from_raw(const Eigen::VectorXd& raw) {
  if (raw.size() < 3) throw InputError("raw hyperparameter vector too short");
  const Eigen::Index dim = raw.size() - 2;
  Eigen::VectorXd ls(dim);
  for (Eigen::Index d = 0; d < dim; ++d) ls[d] = softplus(raw[d + 1]);
  return KernelHyperparams(softplus(raw[0]), std::move(ls), softplus(raw[dim + 1]));
}

KernelHyperparams KernelHyperparams::isotropic(Eigen::Index dim, double signal_variance,
                                               double lengthscale, double noise_variance) {
  return KernelHyperparams(signal_variance, Eigen::VectorXd::Constant(dim, lengthscale),
                           noise_variance);
}

Eigen::VectorXd KernelHyperparams::raw() const {
  Eigen::VectorXd out(raw_size(dim()));
  out[0] = softplus_inverse(signal_variance_);
  for (Eigen::Index d = 0; d < dim(); ++d) out[d + 1] = softplus_inverse(lengthscales_[d]);
  out[dim() + 1] = softplus_inverse(noise_variance_);
  return out;
}

KernelHyperparams KernelHyperparams::scaled(double factor) const {
  return KernelHyperparams(signal_variance_ * factor, lengthscales_, noise_variance_ * factor);
}

KernelHyperparams KernelHyperparams::with_noise(double noise_variance) const {
  return KernelHyperparams(signal_variance_, lengthscales_, noise_variance);
}

KernelHyperparams KernelHyperparams::with_signal_variance(double signal_variance) const {
  return KernelHyperparams(signal_variance, lengthscales_, noise_variance_);
}

// --- TaskDataset --------------------------------------------------------------

TaskDataset::TaskDataset(Eigen::MatrixXd x, Eigen::VectorXd y, int id)
    : inputs(std::move(x)), observations(std::move(y)), task_id(id) {
  if (inputs.rows() != observations.size())
    throw InputError("dataset: input rows (" + std::to_string(inputs.rows()) +
                     ") differ from observation count (" + std::to_string(observations.size()) +
                     ")");
  if (!inputs.allFinite() || !observations.allFinite())
    throw InputError("dataset contains NaN or Inf");
}

TaskDataset TaskDataset::empty(Eigen::Index dim, int id) {
  return TaskDataset(Eigen::MatrixXd(0, dim), Eigen::VectorXd(0), id);
}

TaskDataset TaskDataset::with_observations(Eigen::VectorXd y) const {
  return TaskDataset(inputs, std::move(y), task_id);
}

MeanFunction zero_mean() {
  return [](const Eigen::MatrixXd& x) { return Eigen::VectorXd::Zero(x.rows()).eval(); };
}

MeanFunction constant_mean(double value) {
  return [value](const Eigen::MatrixXd& x) {
    return Eigen::VectorXd::Constant(x.rows(), value).eval();
  };
}

// --- kernel -------------------------------------------------------------------

Eigen::MatrixXd kernel_eval(const KernelHyperparams& hp, const Eigen::MatrixXd& a,
                            const Eigen::MatrixXd& b) {
  if (a.cols() != hp.dim() || b.cols() != hp.dim())
    throw InputError("kernel_eval: input dimension does not match lengthscales");
  const Eigen::RowVectorXd inv_ls = hp.lengthscales().cwiseInverse().transpose();
  // Column-per-point layout keeps the inner loop contiguous.
  const Eigen::MatrixXd as = (a.array().rowwise() * inv_ls.array()).matrix().transpose();
  const Eigen::MatrixXd bs = (b.array().rowwise() * inv_ls.array()).matrix().transpose();
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double r2 = (as.col(i) - bs.col(j)).squaredNorm();
      out(i, j) = hp.signal_variance() * std::exp(-0.5 * r2);
    }
  }
  return out;
}

// --- Cholesky -----------------------------------------------------------------

double RobustCholesky::log_determinant() const {
  const auto& m = llt.matrixLLT();
  return 2.0 * m.diagonal().array().log().sum();
}

RobustCholesky robust_cholesky(const Eigen::MatrixXd& matrix) {
  RobustCholesky out;
  const Eigen::Index n = matrix.rows();
  if (n == 0) {
    out.llt.compute(matrix);
    return out;
  }
  out.llt.compute(matrix);
  if (out.llt.info() == Eigen::Success) return out;

  double scale = matrix.trace() / static_cast<double>(n);
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  double jitter = 1e-10 * scale;
  const double max_jitter = 1e-4 * scale * (1.0 + 1e-9);
  Eigen::MatrixXd work = matrix;
  while (jitter <= max_jitter) {
    work.diagonal() = matrix.diagonal().array() + jitter;
    out.llt.compute(work);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = jitter;
      return out;
    }
    jitter *= 10.0;
  }
  throw NumericalError("Cholesky factorization failed after jitter escalation", jitter / 10.0);
}

// --- ConditionedGP ------------------------------------------------------------

ConditionedGP::ConditionedGP(KernelHyperparams hp, TaskDataset data, MeanFunction prior_mean)
    : hp_(std::move(hp)), data_(std::move(data)), prior_mean_(std::move(prior_mean)) {
  if (!data_.is_empty() && data_.dim() != hp_.dim())
    throw InputError("condition: data dimension does not match hyperparameters");
  if (data_.is_empty()) {
    weights_ = Eigen::VectorXd(0);
    return;
  }
  Eigen::MatrixXd k = kernel_eval(hp_, data_.inputs, data_.inputs);
  k.diagonal().array() += hp_.noise_variance();
  factor_ = robust_cholesky(k);
  weights_ = factor_.llt.solve(data_.observations - prior_mean_(data_.inputs));
}

Eigen::MatrixXd ConditionedGP::cholesky_factor() const {
  if (data_.is_empty()) return Eigen::MatrixXd(0, 0);
  return factor_.lower();
}

void ConditionedGP::check_queries(const Eigen::MatrixXd& queries) const {
  if (queries.cols() != hp_.dim())
    throw InputError("predict: query dimension does not match training dimension");
}

GaussianPrediction ConditionedGP::predict(const Eigen::MatrixXd& queries) const {
  check_queries(queries);
  GaussianPrediction out;
  out.mean = prior_mean_(queries);
  out.covariance = kernel_eval(hp_, queries, queries);
  if (data_.is_empty()) return out;
  const Eigen::MatrixXd cross = kernel_eval(hp_, data_.inputs, queries);
  out.mean.noalias() += cross.transpose() * weights_;
  const Eigen::MatrixXd v = factor_.llt.matrixL().solve(cross);
  out.covariance.noalias() -= v.transpose() * v;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

MarginalPrediction ConditionedGP::predict_marginal(const Eigen::MatrixXd& queries) const {
  check_queries(queries);
  MarginalPrediction out;
  out.mean = prior_mean_(queries);
  out.variance = Eigen::VectorXd::Constant(queries.rows(), hp_.signal_variance());
  if (data_.is_empty()) return out;
  const Eigen::MatrixXd cross = kernel_eval(hp_, data_.inputs, queries);
  out.mean.noalias() += cross.transpose() * weights_;
  const Eigen::MatrixXd v = factor_.llt.matrixL().solve(cross);
  out.variance -= v.colwise().squaredNorm().transpose();
  return out;
}

ConditionedGP condition(const KernelHyperparams& hp, const TaskDataset& data,
                        const MeanFunction& prior_mean) {
  return ConditionedGP(hp, data, prior_mean);
}

// --- marginal likelihood ------------------------------------------------------

LikelihoodValue log_marginal_likelihood(const KernelHyperparams& hp, const TaskDataset& data,
                                        const MeanFunction& prior_mean,
                                        const Eigen::MatrixXd* extra_covariance) {
  if (data.is_empty()) throw InputError("log_marginal_likelihood: empty dataset");
  if (data.dim() != hp.dim()) throw InputError("log_marginal_likelihood: dimension mismatch");
  const Eigen::Index n = data.size();
  const Eigen::Index dim = hp.dim();
  if (extra_covariance && (extra_covariance->rows() != n || extra_covariance->cols() != n))
    throw InputError("log_marginal_likelihood: extra covariance has the wrong shape");

  const Eigen::MatrixXd k_se = kernel_eval(hp, data.inputs, data.inputs);
  Eigen::MatrixXd k = k_se;
  if (extra_covariance) k += *extra_covariance;
  k.diagonal().array() += hp.noise_variance();

  const RobustCholesky chol = robust_cholesky(k);
  const Eigen::VectorXd residual = data.observations - prior_mean(data.inputs);
  const Eigen::VectorXd alpha = chol.llt.solve(residual);

  LikelihoodValue out;
  out.value = -0.5 * residual.dot(alpha) - 0.5 * chol.log_determinant() -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  // d LML / d theta = 1/2 tr((alpha alpha^T - K^{-1}) dK/dtheta)
  Eigen::MatrixXd g = chol.llt.solve(Eigen::MatrixXd::Identity(n, n));
  g = 0.5 * (alpha * alpha.transpose() - g);
  const Eigen::MatrixXd h = g.cwiseProduct(k_se);

  const Eigen::VectorXd raw = hp.raw();
  out.gradient.resize(raw.size());
  out.gradient[0] = hp.signal_variance() > 0.0
                        ? h.sum() / hp.signal_variance() * softplus_derivative(raw[0])
                        : 0.0;
  for (Eigen::Index d = 0; d < dim; ++d) {
    const double l = hp.lengthscales()[d];
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double xj = data.inputs(j, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double diff = data.inputs(i, d) - xj;
        acc += h(i, j) * diff * diff;
      }
    }
    out.gradient[d + 1] = acc / (l * l * l) * softplus_derivative(raw[d + 1]);
  }
  out.gradient[dim + 1] = g.trace() * softplus_derivative(raw[dim + 1]);
  return out;
}

// --- hyperparameter search ----------------------------------------------------

BoxBounds softplus_bounds(Eigen::Index size, double lower, double upper) {
  return BoxBounds::uniform(size, softplus_inverse(lower), softplus_inverse(upper));
}

std::vector<Eigen::VectorXd> draw_initial_guesses(std::size_t count, const BoxBounds& bounds,
                                                  Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    Eigen::VectorXd x(bounds.lower.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
    out.push_back(bounds.clamp(x));
  }
  return out;
}

HyperparameterFit optimize_hyperparameters(const TaskDataset& data, const MeanFunction& prior_mean,
                                           Rng& rng, const HyperparameterOptions& options) {
  if (data.is_empty()) throw InputError("optimize_hyperparameters: empty dataset");
  if (options.n_restarts < 1) throw InputError("optimize_hyperparameters: n_restarts must be >= 1");
  const Eigen::Index size = KernelHyperparams::raw_size(data.dim());
  const BoxBounds bounds = softplus_bounds(size, options.lower_bound, options.upper_bound);
  const auto starts =
      draw_initial_guesses(static_cast<std::size_t>(options.n_restarts), bounds, rng);

  const DifferentiableObjective lml = [&](const Eigen::VectorXd& raw, Eigen::VectorXd& grad) {
    const LikelihoodValue v = log_marginal_likelihood(KernelHyperparams::from_raw(raw), data,
                                                      prior_mean, options.extra_covariance);
    grad = v.gradient;
    return v.value;
  };
  MultiStartResult best = multistart_maximize(lml, starts, bounds, options.optimizer);
  return {KernelHyperparams::from_raw(best.x), best.value, std::move(best.restarts)};
}

Normalization normalize_targets(const Eigen::VectorXd& y) {
  if (y.size() == 0) throw InputError("normalize_targets: empty vector");
  Normalization out;
  out.mean = y.mean();
  const double var = (y.array() - out.mean).square().mean();
  const double sd = std::sqrt(var);
  out.std = sd > 1e-12 ? sd : 1.0;
  out.normalized = ((y.array() - out.mean) / out.std).matrix();
  return out;
}

}  // namespace tbo

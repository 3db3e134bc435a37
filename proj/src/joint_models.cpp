#include <cmath>
#include <numbers>

#include "tbo/errors.hpp"
#include "tbo/transfer_models.hpp"

namespace tbo {

// --- parameterization ---------------------------------------------------------

namespace {
bool has_task_kernels(ModelKind kind) {
  return kind == ModelKind::Gpbo || kind == ModelKind::Hgp || kind == ModelKind::Wsgp;
}
}  // namespace

JointParameterization::JointParameterization(ModelKind kind, int n_sources, Eigen::Index dim,
                                             int rank)
    : kind_(kind), n_tasks_(n_sources + 1), dim_(dim) {
  if (!is_joint(kind)) throw InputError("JointParameterization: not a jointly trained kind");
  if (dim <= 0) throw InputError("JointParameterization: dimension must be positive");
  if (kind == ModelKind::Gpbo && n_sources != 0)
    throw InputError("JointParameterization: gpbo has no sources");
  if (kind != ModelKind::Gpbo && n_sources < 1)
    throw InputError("JointParameterization: at least one source is required");
  if (kind == ModelKind::Mtgp || kind == ModelKind::Mtkgp) {
    if (rank == 0) rank_ = std::min(n_tasks_, 2);
    else if (rank < 0) rank_ = n_tasks_;
    else rank_ = std::min(rank, n_tasks_);
  }
  size_ = n_groups() * group_size();
  if (kind == ModelKind::Wsgp) size_ += n_sources;
  if (kind == ModelKind::Mtgp || kind == ModelKind::Mtkgp) size_ += n_tasks_;
}

Eigen::Index JointParameterization::group_size() const {
  if (has_task_kernels(kind_)) return dim_ + 2;
  return dim_ + static_cast<Eigen::Index>(n_tasks_) * rank_ + n_tasks_;
}

Eigen::Index JointParameterization::n_groups() const {
  return kind_ == ModelKind::Mtkgp ? 1 : n_tasks_;
}

BoxBounds JointParameterization::bounds(double lower, double upper) const {
  BoxBounds b = softplus_bounds(size_, lower, upper);
  if (kind_ == ModelKind::Mtgp || kind_ == ModelKind::Mtkgp) {
    const double limit = std::sqrt(upper);
    const Eigen::Index n_factor = static_cast<Eigen::Index>(n_tasks_) * rank_;
    for (Eigen::Index g = 0; g < n_groups(); ++g) {
      const Eigen::Index off = g * group_size() + dim_;
      b.lower.segment(off, n_factor).setConstant(-limit);
      b.upper.segment(off, n_factor).setConstant(limit);
    }
  }
  return b;
}

CoregionalizationSpec JointParameterization::coregionalization(const Eigen::VectorXd& raw) const {
  if (raw.size() != size_) throw InputError("JointParameterization: raw vector has wrong size");
  const int ns = n_tasks_ - 1;
  switch (kind_) {
    case ModelKind::Gpbo: {
      CoregionalizationSpec spec;
      spec.kind = ModelKind::Gpbo;
      spec.matrices.push_back(Eigen::MatrixXd::Ones(1, 1));
      return spec;
    }
    case ModelKind::Hgp:
      return hgp_coregionalization(ns);
    case ModelKind::Wsgp: {
      Eigen::VectorXd w = raw.tail(ns).unaryExpr([](double v) { return softplus(v); });
      return wsgp_coregionalization(w);
    }
    default: {
      std::vector<Eigen::MatrixXd> factors;
      std::vector<Eigen::VectorXd> diagonals;
      const Eigen::Index n_factor = static_cast<Eigen::Index>(n_tasks_) * rank_;
      for (Eigen::Index g = 0; g < n_groups(); ++g) {
        const Eigen::Index off = g * group_size() + dim_;
        factors.push_back(Eigen::Map<const Eigen::MatrixXd>(raw.data() + off, n_tasks_, rank_));
        diagonals.push_back(raw.segment(off + n_factor, n_tasks_).unaryExpr(
            [](double v) { return softplus(v); }));
      }
      return mtgp_coregionalization(kind_, factors, diagonals);
    }
  }
}

std::vector<KernelHyperparams> JointParameterization::task_kernels(const Eigen::VectorXd& raw) const {
  if (raw.size() != size_) throw InputError("JointParameterization: raw vector has wrong size");
  std::vector<KernelHyperparams> out;
  if (has_task_kernels(kind_)) {
    for (int t = 0; t < n_tasks_; ++t)
      out.push_back(KernelHyperparams::from_raw(raw.segment(t * group_size(), group_size())));
    return out;
  }
  const Eigen::Index noise_off = n_groups() * group_size();
  for (int t = 0; t < n_tasks_; ++t) {
    const Eigen::Index g = kind_ == ModelKind::Mtkgp ? 0 : t;
    Eigen::VectorXd ls =
        raw.segment(g * group_size(), dim_).unaryExpr([](double v) { return softplus(v); });
    out.emplace_back(1.0, std::move(ls), softplus(raw[noise_off + t]));
  }
  return out;
}

JointKernel JointParameterization::kernel(const Eigen::VectorXd& raw) const {
  return build_joint_kernel(coregionalization(raw), task_kernels(raw));
}

Eigen::VectorXd JointParameterization::raw_gradient(const Eigen::VectorXd& raw,
                                                    const KernelGradients& g) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(size_);
  const auto sp = [](double v) { return softplus_derivative(v); };
  const int t_idx = n_tasks_ - 1;
  if (has_task_kernels(kind_)) {
    for (int t = 0; t < n_tasks_; ++t) {
      const Eigen::Index off = t * group_size();
      out[off] = g.signal[t] * sp(raw[off]);
      for (Eigen::Index d = 0; d < dim_; ++d)
        out[off + 1 + d] = g.lengthscale[t][d] * sp(raw[off + 1 + d]);
      out[off + dim_ + 1] = g.noise[t] * sp(raw[off + dim_ + 1]);
    }
    if (kind_ == ModelKind::Wsgp) {
      const Eigen::Index off = n_groups() * group_size();
      for (int s = 0; s < t_idx; ++s) {
        const Eigen::MatrixXd& gw = g.coregionalization[s];
        const double dw = gw(s, s) + gw(s, t_idx) + gw(t_idx, s) + gw(t_idx, t_idx);
        out[off + s] = dw * sp(raw[off + s]);
      }
    }
    return out;
  }
  const Eigen::Index n_factor = static_cast<Eigen::Index>(n_tasks_) * rank_;
  for (Eigen::Index grp = 0; grp < n_groups(); ++grp) {
    const Eigen::Index off = grp * group_size();
    for (Eigen::Index d = 0; d < dim_; ++d)
      out[off + d] = g.lengthscale[grp][d] * sp(raw[off + d]);
    const Eigen::Map<const Eigen::MatrixXd> lambda(raw.data() + off + dim_, n_tasks_, rank_);
    const Eigen::MatrixXd& gw = g.coregionalization[grp];
    const Eigen::MatrixXd d_lambda = (gw + gw.transpose()) * lambda;
    out.segment(off + dim_, n_factor) = Eigen::Map<const Eigen::VectorXd>(d_lambda.data(), n_factor);
    for (int t = 0; t < n_tasks_; ++t)
      out[off + dim_ + n_factor + t] = gw(t, t) * sp(raw[off + dim_ + n_factor + t]);
  }
  const Eigen::Index noise_off = n_groups() * group_size();
  for (int t = 0; t < n_tasks_; ++t) out[noise_off + t] = g.noise[t] * sp(raw[noise_off + t]);
  return out;
}

// --- joint likelihood -----------------------------------------------------------

namespace {

/// Smallest contiguous task range touched by a coregionalization matrix.
std::pair<int, int> active_tasks(const Eigen::MatrixXd& w) {
  int lo = static_cast<int>(w.rows()), hi = -1;
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j)
      if (w(i, j) != 0.0) {
        lo = std::min({lo, i, j});
        hi = std::max({hi, i, j});
      }
  return {lo, hi};
}

}  // namespace

LikelihoodValue joint_log_likelihood(const JointParameterization& param, const Eigen::VectorXd& raw,
                                     const StackedData& data, bool wsgp_blocked) {
  const JointKernel kernel = param.kernel(raw);
  const int n_tasks = param.n_tasks();
  if (static_cast<int>(data.offsets.size()) != n_tasks + 1)
    throw InputError("joint_log_likelihood: task count mismatch");
  const Eigen::Index n = data.size();
  LikelihoodValue out;
  out.gradient = Eigen::VectorXd::Zero(param.size());
  if (n == 0) return out;

  const auto& terms = kernel.terms();
  const auto& off = data.offsets;
  // Each term's SE matrix restricted to the rows of the tasks it touches.
  std::vector<Eigen::MatrixXd> se(terms.size());
  std::vector<std::pair<int, int>> range(terms.size());
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t nu = 0; nu < terms.size(); ++nu) {
    range[nu] = active_tasks(terms[nu].coregionalization);
    const auto [lo, hi] = range[nu];
    if (hi < 0) continue;
    const Eigen::Index r0 = off[lo], len = off[hi + 1] - off[lo];
    if (len == 0) continue;
    const Eigen::MatrixXd x = data.inputs.middleRows(r0, len);
    se[nu] = kernel_eval(terms[nu].kernel, x, x);
    for (int a = lo; a <= hi; ++a)
      for (int b = lo; b <= hi; ++b) {
        const double w = terms[nu].coregionalization(a, b);
        const Eigen::Index na = data.task_size(a), nb = data.task_size(b);
        if (w == 0.0 || na == 0 || nb == 0) continue;
        k.block(off[a], off[b], na, nb) += w * se[nu].block(off[a] - r0, off[b] - r0, na, nb);
      }
  }
  for (Eigen::Index i = 0; i < n; ++i) k(i, i) += kernel.task_noise()[data.tasks[i]];

  Eigen::VectorXd alpha;
  Eigen::MatrixXd k_inv;
  double log_det = 0.0;
  if (param.kind() == ModelKind::Wsgp && wsgp_blocked) {
    const WsgpBlockInverse inv = block_inverse_from_stacked(k, off);
    alpha = inv.solve(Eigen::VectorXd(data.observations));
    log_det = inv.log_determinant();
    k_inv = inv.dense_inverse();
  } else {
    const RobustCholesky chol = robust_cholesky(k);
    alpha = chol.llt.solve(data.observations);
    log_det = chol.log_determinant();
    k_inv = chol.llt.solve(Eigen::MatrixXd::Identity(n, n));
  }
  out.value = -0.5 * data.observations.dot(alpha) - 0.5 * log_det -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  Eigen::MatrixXd g = 0.5 * (alpha * alpha.transpose() - k_inv);
  k_inv.resize(0, 0);

  JointParameterization::KernelGradients kg;
  kg.noise = Eigen::VectorXd::Zero(n_tasks);
  for (int a = 0; a < n_tasks; ++a)
    kg.noise[a] = g.diagonal().segment(off[a], data.task_size(a)).sum();
  const Eigen::Index dim = data.inputs.cols();
  for (std::size_t nu = 0; nu < terms.size(); ++nu) {
    const Eigen::MatrixXd& w = terms[nu].coregionalization;
    Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(n_tasks, n_tasks);
    Eigen::VectorXd gl = Eigen::VectorXd::Zero(dim);
    const auto [lo, hi] = range[nu];
    if (hi >= 0 && se[nu].size() > 0) {
      const Eigen::Index r0 = off[lo];
      const Eigen::VectorXd ls = terms[nu].kernel.lengthscales();
      for (int a = lo; a <= hi; ++a)
        for (int b = lo; b <= hi; ++b) {
          const Eigen::Index na = data.task_size(a), nb = data.task_size(b);
          if (na == 0 || nb == 0) continue;
          if (w(a, b) == 0.0 && has_task_kernels(param.kind())) continue;
          const Eigen::MatrixXd h = g.block(off[a], off[b], na, nb)
                                        .cwiseProduct(se[nu].block(off[a] - r0, off[b] - r0, na, nb));
          gw(a, b) = h.sum();
          if (w(a, b) == 0.0) continue;
          // sum_ij h_ij (x_i - x_j)^2 = sum_i x_i^2 r_i + sum_j x_j^2 c_j - 2 x_a^T h x_b
          const Eigen::VectorXd rows = h.rowwise().sum();
          const Eigen::VectorXd cols = h.colwise().sum().transpose();
          const auto xa = data.inputs.middleRows(off[a], na);
          const auto xb = data.inputs.middleRows(off[b], nb);
          for (Eigen::Index d = 0; d < dim; ++d) {
            const double s = xa.col(d).cwiseAbs2().dot(rows) + xb.col(d).cwiseAbs2().dot(cols) -
                             2.0 * xa.col(d).dot(h * xb.col(d));
            gl[d] += w(a, b) * s;
          }
        }
      gl.array() /= ls.array().cube();
    }
    const double sf2 = terms[nu].kernel.signal_variance();
    kg.signal.push_back(sf2 > 0.0 ? w.cwiseProduct(gw).sum() / sf2 : 0.0);
    kg.lengthscale.push_back(std::move(gl));
    kg.coregionalization.push_back(std::move(gw));
  }
  out.gradient = param.raw_gradient(raw, kg);
  return out;
}

// --- conditioned joint model ------------------------------------------------------

JointModel::JointModel(ModelKind kind, CoregionalizationSpec spec,
                       std::vector<KernelHyperparams> task_kernels, std::vector<TaskDataset> sources,
                       TaskDataset target, double mean_offset, bool wsgp_blocked)
    : kind_(kind),
      spec_(std::move(spec)),
      task_kernels_(std::move(task_kernels)),
      sources_(std::move(sources)),
      target_(std::move(target)),
      mean_offset_(mean_offset),
      kernel_(build_joint_kernel(spec_, task_kernels_)) {
  if (kernel_.n_tasks() != static_cast<int>(sources_.size()) + 1)
    throw InputError("JointModel: task count does not match the number of datasets");
  if (kernel_.dim() != target_.dim()) throw InputError("JointModel: dimension mismatch");
  stacked_ = stack_tasks(sources_, target_);
  if (stacked_.size() == 0) {
    weights_ = Eigen::VectorXd(0);
    return;
  }
  const Eigen::MatrixXd k = kernel_.gram(stacked_.inputs, stacked_.tasks);
  const Eigen::VectorXd residual =
      stacked_.observations - Eigen::VectorXd::Constant(stacked_.size(), mean_offset_);
  if (kind_ == ModelKind::Wsgp && wsgp_blocked && !sources_.empty()) {
    blocked_.emplace(block_inverse_from_stacked(k, stacked_.offsets));
    weights_ = blocked_->solve(residual);
  } else {
    dense_.emplace(robust_cholesky(k));
    weights_ = dense_->llt.solve(residual);
  }
}

std::uint64_t JointModel::factorization_flops() const {
  return blocked_ ? blocked_->factorization_flops() : 0;
}

Eigen::MatrixXd JointModel::cross_to_data(const Eigen::MatrixXd& queries) const {
  const std::vector<int> tasks(queries.rows(), kernel_.n_tasks() - 1);
  return kernel_.cross(queries, tasks, stacked_.inputs, stacked_.tasks);
}

GaussianPrediction JointModel::predict(const Eigen::MatrixXd& queries) const {
  if (queries.cols() != dim()) throw InputError("JointModel::predict: dimension mismatch");
  const std::vector<int> tasks(queries.rows(), kernel_.n_tasks() - 1);
  GaussianPrediction out;
  out.covariance = kernel_.cross(queries, tasks, queries, tasks);
  out.mean = Eigen::VectorXd::Constant(queries.rows(), mean_offset_);
  if (stacked_.size() == 0) return out;
  const Eigen::MatrixXd kq = cross_to_data(queries);
  out.mean.noalias() += kq * weights_;
  if (dense_) {
    const Eigen::MatrixXd v = dense_->llt.matrixL().solve(kq.transpose());
    out.covariance.noalias() -= v.transpose() * v;
  } else {
    out.covariance.noalias() -= kq * blocked_->solve(Eigen::MatrixXd(kq.transpose()));
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

MarginalPrediction JointModel::predict_marginal(const Eigen::MatrixXd& queries) const {
  if (queries.cols() != dim()) throw InputError("JointModel::predict: dimension mismatch");
  const int t = kernel_.n_tasks() - 1;
  double prior_var = 0.0;
  for (const auto& term : kernel_.terms())
    prior_var += term.coregionalization(t, t) * term.kernel.signal_variance();
  MarginalPrediction out;
  out.mean = Eigen::VectorXd::Constant(queries.rows(), mean_offset_);
  out.variance = Eigen::VectorXd::Constant(queries.rows(), prior_var);
  if (stacked_.size() == 0) return out;
  const Eigen::MatrixXd kq = cross_to_data(queries);
  out.mean.noalias() += kq * weights_;
  if (dense_) {
    const Eigen::MatrixXd v = dense_->llt.matrixL().solve(kq.transpose());
    out.variance -= v.colwise().squaredNorm().transpose();
  } else {
    const Eigen::MatrixXd s = blocked_->solve(Eigen::MatrixXd(kq.transpose()));
    out.variance -= kq.cwiseProduct(s.transpose()).rowwise().sum();
  }
  out.variance = out.variance.cwiseMax(0.0);
  return out;
}

// --- training ------------------------------------------------------------------

JointModel train_joint(ModelKind kind, const std::vector<TaskDataset>& sources,
                       const TaskDataset& target, Rng& rng, const TrainingOptions& options) {
  if (!is_joint(kind)) throw InputError("train_joint: kind is not jointly trained");
  if (options.n_restarts < 1) throw InputError("train_joint: n_restarts must be >= 1");
  const std::vector<TaskDataset> used =
      kind == ModelKind::Gpbo ? std::vector<TaskDataset>{} : sources;
  if (kind != ModelKind::Gpbo && used.empty())
    throw InputError("train_joint: at least one source is required");
  const JointParameterization param(kind, static_cast<int>(used.size()), target.dim(),
                                    options.coregionalization_rank);
  StackedData stacked = stack_tasks(used, target);

  if (stacked.size() == 0) {
    const Eigen::VectorXd raw = Eigen::VectorXd::Zero(param.size());
    return JointModel(kind, param.coregionalization(raw), param.task_kernels(raw), used, target,
                      0.0, options.wsgp_blocked);
  }
  const Normalization norm = normalize_targets(stacked.observations);
  stacked.observations = norm.normalized;

  const BoxBounds bounds = param.bounds(options.lower_bound, options.upper_bound);
  const auto starts =
      draw_initial_guesses(static_cast<std::size_t>(options.n_restarts), bounds, rng);
  const bool blocked = options.wsgp_blocked;
  const DifferentiableObjective lml = [&](const Eigen::VectorXd& raw, Eigen::VectorXd& grad) {
    LikelihoodValue v = joint_log_likelihood(param, raw, stacked, blocked);
    grad = std::move(v.gradient);
    return v.value;
  };
  const MultiStartResult best = multistart_maximize(lml, starts, bounds, options.optimizer);

  const double scale = norm.std * norm.std;
  CoregionalizationSpec spec = param.coregionalization(best.x);
  std::vector<KernelHyperparams> kernels = param.task_kernels(best.x);
  if (kind == ModelKind::Mtgp || kind == ModelKind::Mtkgp) {
    for (auto& w : spec.matrices) w *= scale;
    for (auto& hp : kernels) hp = hp.with_noise(hp.noise_variance() * scale);
  } else {
    for (auto& hp : kernels) hp = hp.scaled(scale);
  }
  return JointModel(kind, std::move(spec), std::move(kernels), used, target, norm.mean,
                    options.wsgp_blocked);
}

CoregionalizationSpec coregionalization_for(ModelKind kind, int n_sources) {
  switch (kind) {
    case ModelKind::Hgp:
    case ModelKind::Shgp: {
      CoregionalizationSpec spec = hgp_coregionalization(n_sources);
      spec.kind = kind;
      return spec;
    }
    case ModelKind::Mhgp:
    case ModelKind::Bhgp: {
      CoregionalizationSpec spec = mhgp_coregionalization(n_sources);
      spec.kind = kind;
      return spec;
    }
    case ModelKind::Wsgp:
      return wsgp_coregionalization(Eigen::VectorXd::Zero(n_sources));
    case ModelKind::Gpbo: {
      if (n_sources != 0) throw InputError("coregionalization_for: gpbo has no sources");
      CoregionalizationSpec spec;
      spec.kind = ModelKind::Gpbo;
      spec.matrices.push_back(Eigen::MatrixXd::Ones(1, 1));
      return spec;
    }
    default:
      throw InputError("coregionalization_for: mtgp/mtkgp matrices are learned, not fixed");
  }
}

}  // namespace tbo

#include "tbo/hierarchy.hpp"

#include "tbo/errors.hpp"

namespace tbo {

namespace {

Eigen::MatrixXd solve_lower(const RobustCholesky& f, const Eigen::MatrixXd& rhs) {
  return f.llt.matrixL().solve(rhs);
}

Eigen::MatrixXd vstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), std::max(a.cols(), b.cols()));
  if (a.rows() > 0) out.topRows(a.rows()) = a;
  if (b.rows() > 0) out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace

LevelChain::LevelChain(LevelCoupling coupling, Eigen::Index dim) : coupling_(coupling), dim_(dim) {
  if (dim <= 0) throw InputError("LevelChain: dimension must be positive");
}

LevelChain LevelChain::prefix(std::size_t count) const {
  if (count > levels_.size()) throw InputError("LevelChain::prefix: count exceeds chain length");
  LevelChain out(coupling_, dim_);
  out.levels_.assign(levels_.begin(), levels_.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

void LevelChain::check_queries(const Eigen::MatrixXd& queries) const {
  if (queries.cols() != dim_) throw InputError("LevelChain: query dimension mismatch");
  if (levels_.empty()) throw InputError("LevelChain: chain has no levels");
}

LevelChain::Propagation LevelChain::propagate(const Eigen::MatrixXd& z, bool full_covariance,
                                              bool keep_projections) const {
  const Eigen::Index m = z.rows();
  const std::size_t n_levels = levels_.size();
  Propagation out;
  out.mean = Eigen::VectorXd::Zero(m);
  if (full_covariance) out.covariance = Eigen::MatrixXd::Zero(m, m);
  else out.variance = Eigen::VectorXd::Zero(m);

  if (coupling_ == LevelCoupling::MeanOnly) {
    for (std::size_t n = 0; n < n_levels; ++n) {
      const HierarchyLevel& lvl = *levels_[n];
      out.mean.array() += lvl.mean_offset;
      if (lvl.data.is_empty()) continue;
      out.mean.noalias() += kernel_eval(lvl.kernel, z, lvl.data.inputs) * lvl.weights;
    }
    if (n_levels == 0) return out;
    const HierarchyLevel& top = *levels_.back();
    if (full_covariance) out.covariance = kernel_eval(top.kernel, z, z);
    else out.variance.setConstant(top.kernel.signal_variance());
    if (!top.data.is_empty()) {
      const Eigen::MatrixXd v = solve_lower(top.factor, kernel_eval(top.kernel, top.data.inputs, z));
      if (full_covariance) out.covariance.noalias() -= v.transpose() * v;
      else out.variance -= v.colwise().squaredNorm().transpose();
    }
    return out;
  }

  // cross[j] accumulates the prior covariance between z and level j's inputs.
  std::vector<Eigen::MatrixXd> cross(n_levels);
  for (std::size_t j = 0; j < n_levels; ++j)
    cross[j] = Eigen::MatrixXd::Zero(m, levels_[j]->data.size());
  if (keep_projections) out.projections.resize(n_levels);

  for (std::size_t n = 0; n < n_levels; ++n) {
    const HierarchyLevel& lvl = *levels_[n];
    for (std::size_t j = n; j < n_levels; ++j)
      if (!levels_[j]->data.is_empty()) cross[j] += kernel_eval(lvl.kernel, z, levels_[j]->data.inputs);
    if (full_covariance) out.covariance += kernel_eval(lvl.kernel, z, z);
    else out.variance.array() += lvl.kernel.signal_variance();
    out.mean.array() += lvl.mean_offset;

    if (lvl.data.is_empty()) {
      if (keep_projections) out.projections[n] = Eigen::MatrixXd(0, m);
      continue;
    }
    out.mean.noalias() += cross[n] * lvl.weights;
    const Eigen::MatrixXd v = solve_lower(lvl.factor, cross[n].transpose());
    for (std::size_t j = n + 1; j < n_levels; ++j)
      if (!levels_[j]->data.is_empty()) cross[j].noalias() -= v.transpose() * levels_[j]->projections[n];
    if (full_covariance) out.covariance.noalias() -= v.transpose() * v;
    else out.variance -= v.colwise().squaredNorm().transpose();
    if (keep_projections) out.projections[n] = v;
  }
  if (full_covariance) out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

LevelPrior LevelChain::prior_for(const Eigen::MatrixXd& inputs) const {
  if (inputs.cols() != dim_) throw InputError("LevelChain::prior_for: dimension mismatch");
  LevelPrior out;
  const Eigen::Index m = inputs.rows();
  if (levels_.empty()) {
    out.mean = Eigen::VectorXd::Zero(m);
    out.covariance = Eigen::MatrixXd::Zero(m, m);
    return out;
  }
  if (coupling_ == LevelCoupling::MeanOnly) {
    out.mean = posterior_mean(inputs);
    out.covariance = Eigen::MatrixXd::Zero(m, m);
    return out;
  }
  Propagation p = propagate(inputs, true, true);
  out.mean = std::move(p.mean);
  out.covariance = std::move(p.covariance);
  out.projections = std::move(p.projections);
  return out;
}

LevelChain LevelChain::with_level(const LevelPrior& prior, TaskDataset data,
                                  KernelHyperparams kernel, double mean_offset) const {
  if (data.dim() != dim_ || kernel.dim() != dim_)
    throw InputError("LevelChain::with_level: dimension mismatch");
  const Eigen::Index n = data.size();
  if (prior.mean.size() != n || prior.covariance.rows() != n)
    throw InputError("LevelChain::with_level: prior does not match the level's inputs");
  if (coupling_ == LevelCoupling::Covariance && prior.projections.size() != levels_.size())
    throw InputError("LevelChain::with_level: prior was built for a different chain");

  auto level = std::make_shared<HierarchyLevel>(HierarchyLevel{
      std::move(data), std::move(kernel), mean_offset, RobustCholesky{}, Eigen::VectorXd(), {}});
  if (n > 0) {
    Eigen::MatrixXd c = kernel_eval(level->kernel, level->data.inputs, level->data.inputs);
    if (coupling_ == LevelCoupling::Covariance) c += prior.covariance;
    c = 0.5 * (c + c.transpose());
    c.diagonal().array() += level->kernel.noise_variance();
    level->factor = robust_cholesky(c);
    level->weights =
        level->factor.llt.solve(level->data.observations - prior.mean -
                                Eigen::VectorXd::Constant(n, mean_offset));
  } else {
    level->weights = Eigen::VectorXd(0);
  }
  if (coupling_ == LevelCoupling::Covariance) level->projections = prior.projections;

  LevelChain out = *this;
  out.levels_.push_back(std::move(level));
  return out;
}

GaussianPrediction LevelChain::posterior(const Eigen::MatrixXd& queries) const {
  check_queries(queries);
  Propagation p = propagate(queries, true, false);
  return {std::move(p.mean), std::move(p.covariance)};
}

MarginalPrediction LevelChain::posterior_marginal(const Eigen::MatrixXd& queries) const {
  check_queries(queries);
  Propagation p = propagate(queries, false, false);
  return {std::move(p.mean), p.variance.cwiseMax(0.0)};
}

Eigen::VectorXd LevelChain::posterior_mean(const Eigen::MatrixXd& queries) const {
  check_queries(queries);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(queries.rows());
  if (coupling_ == LevelCoupling::MeanOnly) {
    for (const auto& lvl : levels_) {
      mean.array() += lvl->mean_offset;
      if (!lvl->data.is_empty())
        mean.noalias() += kernel_eval(lvl->kernel, queries, lvl->data.inputs) * lvl->weights;
    }
    return mean;
  }
  return propagate(queries, false, false).mean;
}

LevelChain::BoostBlocks LevelChain::own_blocks(std::size_t index, const Eigen::MatrixXd& q,
                                               const Eigen::MatrixXd& d, bool full) const {
  const HierarchyLevel& lvl = *levels_[index];
  BoostBlocks out;
  if (full) out.qq = kernel_eval(lvl.kernel, q, q);
  else out.qq_diag = Eigen::VectorXd::Constant(q.rows(), lvl.kernel.signal_variance());
  out.qd = kernel_eval(lvl.kernel, q, d);
  out.dd = kernel_eval(lvl.kernel, d, d);
  if (lvl.data.is_empty()) return out;
  const Eigen::MatrixXd vq = solve_lower(lvl.factor, kernel_eval(lvl.kernel, lvl.data.inputs, q));
  const Eigen::MatrixXd vd = solve_lower(lvl.factor, kernel_eval(lvl.kernel, lvl.data.inputs, d));
  if (full) out.qq.noalias() -= vq.transpose() * vq;
  else out.qq_diag -= vq.colwise().squaredNorm().transpose();
  out.qd.noalias() -= vq.transpose() * vd;
  out.dd.noalias() -= vd.transpose() * vd;
  return out;
}

LevelChain::BoostBlocks LevelChain::boosted_blocks(std::size_t count, const Eigen::MatrixXd& q,
                                                   const Eigen::MatrixXd& d, bool full,
                                                   bool recursive) const {
  if (count == 0) {
    BoostBlocks zero;
    if (full) zero.qq = Eigen::MatrixXd::Zero(q.rows(), q.rows());
    else zero.qq_diag = Eigen::VectorXd::Zero(q.rows());
    zero.qd = Eigen::MatrixXd::Zero(q.rows(), d.rows());
    zero.dd = Eigen::MatrixXd::Zero(d.rows(), d.rows());
    return zero;
  }
  const std::size_t index = count - 1;
  BoostBlocks out = own_blocks(index, q, d, full);
  if (count == 1) return out;

  const HierarchyLevel& lvl = *levels_[index];
  const Eigen::MatrixXd& x = lvl.data.inputs;
  const Eigen::Index p = d.rows();
  const Eigen::Index nx = lvl.data.size();
  const Eigen::MatrixXd dx = vstack(d, x);
  const BoostBlocks prev =
      recursive ? boosted_blocks(count - 1, q, dx, full, true) : own_blocks(count - 2, q, dx, full);

  const Eigen::MatrixXd t_qd = prev.qd.leftCols(p);
  const Eigen::MatrixXd t_dd = prev.dd.topLeftCorner(p, p);
  if (nx == 0) {
    if (full) out.qq += prev.qq;
    else out.qq_diag += prev.qq_diag;
    out.qd += t_qd;
    out.dd += t_dd;
    return out;
  }
  const Eigen::MatrixXd t_qx = prev.qd.rightCols(nx);
  const Eigen::MatrixXd t_dx = prev.dd.topRightCorner(p, nx);
  const Eigen::MatrixXd t_xx = prev.dd.bottomRightCorner(nx, nx);
  // alpha(A) = k(A, X) C^{-1}
  const Eigen::MatrixXd alpha_q =
      lvl.factor.llt.solve(kernel_eval(lvl.kernel, x, q)).transpose();
  const Eigen::MatrixXd alpha_d =
      lvl.factor.llt.solve(kernel_eval(lvl.kernel, x, d)).transpose();

  const Eigen::MatrixXd aq_txx = alpha_q * t_xx;
  const Eigen::MatrixXd ad_txx = alpha_d * t_xx;
  if (full) {
    Eigen::MatrixXd b = prev.qq - alpha_q * t_qx.transpose() - t_qx * alpha_q.transpose() +
                        aq_txx * alpha_q.transpose();
    out.qq += 0.5 * (b + b.transpose());
  } else {
    out.qq_diag += prev.qq_diag - 2.0 * alpha_q.cwiseProduct(t_qx).rowwise().sum() +
                   aq_txx.cwiseProduct(alpha_q).rowwise().sum();
  }
  out.qd += t_qd - alpha_q * t_dx.transpose() - t_qx * alpha_d.transpose() +
            aq_txx * alpha_d.transpose();
  Eigen::MatrixXd bd = t_dd - alpha_d * t_dx.transpose() - t_dx * alpha_d.transpose() +
                       ad_txx * alpha_d.transpose();
  out.dd += 0.5 * (bd + bd.transpose());
  return out;
}

GaussianPrediction LevelChain::boosted_posterior(const Eigen::MatrixXd& queries,
                                                 bool recursive) const {
  check_queries(queries);
  if (coupling_ != LevelCoupling::MeanOnly)
    throw InputError("boosted_posterior: requires a mean-only chain");
  const Eigen::MatrixXd none(0, dim_);
  BoostBlocks b = boosted_blocks(levels_.size(), queries, none, true, recursive);
  return {posterior_mean(queries), std::move(b.qq)};
}

MarginalPrediction LevelChain::boosted_posterior_marginal(const Eigen::MatrixXd& queries,
                                                          bool recursive) const {
  check_queries(queries);
  if (coupling_ != LevelCoupling::MeanOnly)
    throw InputError("boosted_posterior: requires a mean-only chain");
  const Eigen::MatrixXd none(0, dim_);
  BoostBlocks b = boosted_blocks(levels_.size(), queries, none, false, recursive);
  return {posterior_mean(queries), b.qq_diag.cwiseMax(0.0)};
}

Eigen::MatrixXd boost_covariance(const Eigen::MatrixXd& sigma_qq, const Eigen::MatrixXd& sigma_tt,
                                 const Eigen::MatrixXd& sigma_tq, const Eigen::MatrixXd& alpha_qt) {
  const Eigen::Index q = sigma_qq.rows();
  const Eigen::Index t = sigma_tt.rows();
  if (sigma_qq.cols() != q || sigma_tt.cols() != t || sigma_tq.rows() != t ||
      sigma_tq.cols() != q || alpha_qt.rows() != q || alpha_qt.cols() != t)
    throw InputError("boost_covariance: block shapes do not agree");
  const Eigen::MatrixXd cross = alpha_qt * sigma_tq;
  Eigen::MatrixXd out = sigma_qq - cross - cross.transpose() +
                        alpha_qt * sigma_tt * alpha_qt.transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace tbo

#include "tbo/wsgp_block_inverse.hpp"

#include "tbo/errors.hpp"

namespace tbo {

namespace {
std::uint64_t cube(Eigen::Index n) {
  const auto u = static_cast<std::uint64_t>(n);
  return u * u * u;
}
std::uint64_t sq(Eigen::Index n) {
  const auto u = static_cast<std::uint64_t>(n);
  return u * u;
}
}  // namespace

WsgpBlockInverse::WsgpBlockInverse(std::vector<Eigen::MatrixXd> a_blocks, Eigen::MatrixXd b,
                                   Eigen::MatrixXd d)
    : b_(std::move(b)) {
  for (const auto& a : a_blocks) {
    if (a.rows() != a.cols()) throw InputError("WsgpBlockInverse: source block not square");
    a_offsets_.push_back(source_size_);
    source_size_ += a.rows();
  }
  a_offsets_.push_back(source_size_);
  d_size_ = d.rows();
  if (d.cols() != d_size_) throw InputError("WsgpBlockInverse: target block not square");
  if (b_.rows() != source_size_ || b_.cols() != d_size_)
    throw InputError("WsgpBlockInverse: coupling block has wrong shape");

  for (const auto& a : a_blocks) {
    a_factors_.push_back(robust_cholesky(a));
    flops_ += cube(a.rows()) / 3;
  }
  a_inv_b_ = solve_a(b_);
  for (const auto& a : a_blocks) flops_ += 2 * sq(a.rows()) * static_cast<std::uint64_t>(d_size_);

  Eigen::MatrixXd s = d;
  if (source_size_ > 0 && d_size_ > 0) {
    s.noalias() -= b_.transpose() * a_inv_b_;
    flops_ += static_cast<std::uint64_t>(source_size_) * sq(d_size_);
  }
  s = 0.5 * (s + s.transpose());
  schur_ = robust_cholesky(s);
  flops_ += cube(d_size_) / 3;
}

Eigen::MatrixXd WsgpBlockInverse::solve_a(const Eigen::MatrixXd& v) const {
  Eigen::MatrixXd out(v.rows(), v.cols());
  for (std::size_t i = 0; i < a_factors_.size(); ++i) {
    const Eigen::Index off = a_offsets_[i];
    const Eigen::Index n = a_offsets_[i + 1] - off;
    if (n == 0) continue;
    out.middleRows(off, n) = a_factors_[i].llt.solve(v.middleRows(off, n));
  }
  return out;
}

Eigen::MatrixXd WsgpBlockInverse::solve(const Eigen::MatrixXd& v) const {
  if (v.rows() != size()) throw InputError("WsgpBlockInverse::solve: size mismatch");
  const Eigen::MatrixXd v1 = v.topRows(source_size_);
  const Eigen::MatrixXd v2 = v.bottomRows(d_size_);
  const Eigen::MatrixXd a_inv_v1 = solve_a(v1);
  Eigen::MatrixXd x2(d_size_, v.cols());
  if (d_size_ > 0) x2 = schur_.llt.solve(v2 - b_.transpose() * a_inv_v1);
  Eigen::MatrixXd out(size(), v.cols());
  out.topRows(source_size_) = a_inv_v1 - a_inv_b_ * x2;
  out.bottomRows(d_size_) = x2;
  return out;
}

Eigen::VectorXd WsgpBlockInverse::solve(const Eigen::VectorXd& v) const {
  return solve(Eigen::MatrixXd(v)).col(0);
}

double WsgpBlockInverse::log_determinant() const {
  double value = d_size_ > 0 ? schur_.log_determinant() : 0.0;
  for (std::size_t i = 0; i < a_factors_.size(); ++i)
    if (a_offsets_[i + 1] > a_offsets_[i]) value += a_factors_[i].log_determinant();
  return value;
}

Eigen::MatrixXd WsgpBlockInverse::dense_inverse() const {
  // [[A^-1 + A^-1 B S^-1 B^T A^-1, -A^-1 B S^-1], [-S^-1 B^T A^-1, S^-1]]
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(size(), size());
  for (std::size_t i = 0; i < a_factors_.size(); ++i) {
    const Eigen::Index off = a_offsets_[i];
    const Eigen::Index n = a_offsets_[i + 1] - off;
    if (n == 0) continue;
    out.block(off, off, n, n) = a_factors_[i].llt.solve(Eigen::MatrixXd::Identity(n, n));
  }
  if (d_size_ == 0) return out;
  const Eigen::MatrixXd s_inv = schur_.llt.solve(Eigen::MatrixXd::Identity(d_size_, d_size_));
  const Eigen::MatrixXd p = a_inv_b_ * s_inv;  // A^-1 B S^-1
  out.topLeftCorner(source_size_, source_size_).noalias() += p * a_inv_b_.transpose();
  out.topRightCorner(source_size_, d_size_) = -p;
  out.bottomLeftCorner(d_size_, source_size_) = -p.transpose();
  out.bottomRightCorner(d_size_, d_size_) = s_inv;
  return out;
}

WsgpBlockInverse block_inverse_from_stacked(const Eigen::MatrixXd& k,
                                            const std::vector<Eigen::Index>& offsets) {
  if (offsets.size() < 2) throw InputError("block_inverse_from_stacked: need at least one task");
  const std::size_t n_tasks = offsets.size() - 1;
  const Eigen::Index ns_end = offsets[n_tasks - 1];
  const Eigen::Index n = offsets.back();
  if (k.rows() != n || k.cols() != n) throw InputError("block_inverse_from_stacked: size mismatch");
  std::vector<Eigen::MatrixXd> blocks;
  for (std::size_t t = 0; t + 1 < n_tasks; ++t) {
    const Eigen::Index off = offsets[t];
    const Eigen::Index len = offsets[t + 1] - off;
    blocks.push_back(k.block(off, off, len, len));
  }
  return WsgpBlockInverse(std::move(blocks), k.topRightCorner(ns_end, n - ns_end),
                          k.bottomRightCorner(n - ns_end, n - ns_end));
}

}  // namespace tbo

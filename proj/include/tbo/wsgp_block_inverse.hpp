#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tbo/gp_core.hpp"

namespace tbo {

/// Inverse of K = [[A, B], [B^T, D]] where A is block diagonal (one block per
/// source), applied through per-block Cholesky factors and the Schur
/// complement S = D - B^T A^{-1} B. A^{-1} is never formed as one matrix.
class WsgpBlockInverse {
 public:
  WsgpBlockInverse(std::vector<Eigen::MatrixXd> a_blocks, Eigen::MatrixXd b, Eigen::MatrixXd d);

  Eigen::Index size() const { return source_size_ + d_size_; }
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& v) const;
  double log_determinant() const;
  /// Dense K^{-1}, assembled block by block (used for likelihood gradients).
  Eigen::MatrixXd dense_inverse() const;

  /// Multiply-add count spent by the factorization (instrumentation).
  std::uint64_t factorization_flops() const { return flops_; }

 private:
  Eigen::MatrixXd solve_a(const Eigen::MatrixXd& v) const;

  std::vector<RobustCholesky> a_factors_;
  std::vector<Eigen::Index> a_offsets_;
  Eigen::Index source_size_ = 0;
  Eigen::Index d_size_ = 0;
  Eigen::MatrixXd b_;
  Eigen::MatrixXd a_inv_b_;  // A^{-1} B
  RobustCholesky schur_;
  std::uint64_t flops_ = 0;
};

/// Applies the WSGP block scheme to a dense joint matrix laid out as stacked tasks.
/// Off-diagonal source-source blocks must be zero.
WsgpBlockInverse block_inverse_from_stacked(const Eigen::MatrixXd& k,
                                            const std::vector<Eigen::Index>& offsets);

}  // namespace tbo

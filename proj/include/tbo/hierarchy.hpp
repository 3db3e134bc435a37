#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "tbo/gp_core.hpp"

namespace tbo {

/// How a level's prior depends on the levels below it.
///  - Covariance: f_n ~ GP(mu_{n-1}^post + c_n, k_n + Sigma_{n-1}^post)  (the SHGP case)
///  - MeanOnly:   f_n ~ GP(mu_{n-1}^post + c_n, k_n)                    (MHGP and BHGP)
enum class LevelCoupling { Covariance, MeanOnly };

struct HierarchyLevel {
  TaskDataset data;
  KernelHyperparams kernel;  // in original output units
  double mean_offset = 0.0;
  RobustCholesky factor;     // of the level's prior covariance at its inputs, plus noise
  Eigen::VectorXd weights;   // C^{-1} (y - m(X))
  // Covariance coupling only: entry n is L_n^{-1} prior_n(X_n, X) for every
  // earlier level n, where X are this level's inputs.
  std::vector<Eigen::MatrixXd> projections;
};

/// Prior a prospective next level would see at its inputs.
struct LevelPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // zero for MeanOnly chains
  std::vector<Eigen::MatrixXd> projections;
};

/// Immutable stack of conditioned GPs, each centred on the posterior of the
/// one below. Copies share level storage.
class LevelChain {
 public:
  LevelChain(LevelCoupling coupling, Eigen::Index dim);

  LevelCoupling coupling() const { return coupling_; }
  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return levels_.size(); }
  const HierarchyLevel& level(std::size_t i) const { return *levels_.at(i); }
  /// The first `count` levels.
  LevelChain prefix(std::size_t count) const;

  LevelPrior prior_for(const Eigen::MatrixXd& inputs) const;
  /// Conditions a new top level on `data` with the given prior (from prior_for).
  LevelChain with_level(const LevelPrior& prior, TaskDataset data, KernelHyperparams kernel,
                        double mean_offset) const;

  /// Posterior of the top level. For MeanOnly chains the covariance is the
  /// top level's own posterior covariance.
  GaussianPrediction posterior(const Eigen::MatrixXd& queries) const;
  MarginalPrediction posterior_marginal(const Eigen::MatrixXd& queries) const;
  Eigen::VectorXd posterior_mean(const Eigen::MatrixXd& queries) const;

  /// Boosted covariance of a MeanOnly chain: each level adds the uncertainty
  /// of the mean it inherits, propagated through its own posterior weights.
  /// With `recursive` false only the top level is boosted.
  GaussianPrediction boosted_posterior(const Eigen::MatrixXd& queries, bool recursive) const;
  MarginalPrediction boosted_posterior_marginal(const Eigen::MatrixXd& queries,
                                                bool recursive) const;

 private:
  struct Propagation {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    Eigen::VectorXd variance;
    std::vector<Eigen::MatrixXd> projections;
  };
  struct BoostBlocks {
    Eigen::MatrixXd qq;  // empty when only the diagonal is wanted
    Eigen::VectorXd qq_diag;
    Eigen::MatrixXd qd;
    Eigen::MatrixXd dd;
  };

  Propagation propagate(const Eigen::MatrixXd& z, bool full_covariance,
                        bool keep_projections) const;
  BoostBlocks boosted_blocks(std::size_t count, const Eigen::MatrixXd& q, const Eigen::MatrixXd& d,
                             bool full, bool recursive) const;
  BoostBlocks own_blocks(std::size_t index, const Eigen::MatrixXd& q, const Eigen::MatrixXd& d,
                         bool full) const;
  void check_queries(const Eigen::MatrixXd& queries) const;

  LevelCoupling coupling_;
  Eigen::Index dim_;
  std::vector<std::shared_ptr<const HierarchyLevel>> levels_;
};

/// Sigma_qq - alpha Sigma_tq - Sigma_qt alpha^T + alpha Sigma_tt alpha^T, the extra
/// query covariance from averaging target posteriors over source-posterior draws.
/// `alpha_qt` is k_t(Q, X_t) (k_t(X_t, X_t) + noise)^{-1}.
Eigen::MatrixXd boost_covariance(const Eigen::MatrixXd& sigma_qq, const Eigen::MatrixXd& sigma_tt,
                                 const Eigen::MatrixXd& sigma_tq, const Eigen::MatrixXd& alpha_qt);

}  // namespace tbo
